//! Bagged Gini trees with class-weighted impurity.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_gini_tree, BinnedMatrix, GiniTreeParams, Tree};
use super::TrainingSet;
use crate::error::Result;
use crate::rng::task_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    Sqrt,
    Log2,
    All,
}

impl MaxFeatures {
    pub fn count(self, d: usize) -> usize {
        let m = match self {
            MaxFeatures::Sqrt => (d as f64).sqrt().floor() as usize,
            MaxFeatures::Log2 => (d as f64).log2().floor() as usize,
            MaxFeatures::All => d,
        };
        m.clamp(1, d.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub max_features: MaxFeatures,
    pub min_samples_split: usize,
    pub min_samples_leaf: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 100,
            max_depth: 8,
            max_features: MaxFeatures::Sqrt,
            min_samples_split: 2,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub n_classes: usize,
    pub trees: Vec<Tree<Vec<f64>>>,
}

impl ForestModel {
    /// Unweighted mean of the per-tree leaf frequency vectors.
    pub(crate) fn predict_into(&self, x: &[f64], out: &mut [f64; 3]) {
        let k = self.n_classes;
        out[..k].iter_mut().for_each(|v| *v = 0.0);
        for t in &self.trees {
            for (o, p) in out[..k].iter_mut().zip(t.leaf(x)) {
                *o += p;
            }
        }
        let n = self.trees.len() as f64;
        out[..k].iter_mut().for_each(|v| *v /= n);
    }
}

/// Each tree draws a bootstrap sample of size `n` from its own stream
/// seeded by `(seed, tree index)`.
pub(crate) fn fit(set: &TrainingSet, params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let binned = BinnedMatrix::new(set.x);
    let n = set.n_rows();
    let tree_params = GiniTreeParams {
        n_classes: set.n_classes(),
        max_depth: params.max_depth,
        max_features: params.max_features.count(set.x.n_cols()),
        min_samples_split: params.min_samples_split,
        min_samples_leaf: params.min_samples_leaf,
    };
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng = task_rng(seed, &[t as u64]);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            grow_gini_tree(&binned, &rows, &set.y, &set.sample_weight, &tree_params, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        n_classes: set.n_classes(),
        trees,
    })
}

//! Multi-class gradient boosting on the softmax log-loss.
//!
//! Every round fits one regression tree per class to the weighted softmax
//! gradients; leaves take a single damped Newton step.

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::tree::{grow_gradient_tree, BinnedMatrix, GradientTreeParams, Tree};
use super::{softmax_in_place, TrainingSet};
use crate::error::{Error, Result};
use crate::rng::task_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
    /// L2 damping of leaf values.
    pub lambda: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_estimators: 100,
            max_depth: 6,
            learning_rate: 0.1,
            subsample: 1.0,
            colsample_bytree: 1.0,
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub n_classes: usize,
    pub learning_rate: f64,
    /// `rounds[r][k]` is the tree for class `k` in round `r`.
    pub rounds: Vec<Vec<Tree<f64>>>,
}

impl GbtModel {
    pub fn raw_scores(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for round in &self.rounds {
            for (o, t) in out.iter_mut().zip(round) {
                *o += self.learning_rate * t.leaf(x);
            }
        }
    }

    pub(crate) fn predict_into(&self, x: &[f64], out: &mut [f64; 3]) {
        let k = self.n_classes;
        self.raw_scores(x, &mut out[..k]);
        softmax_in_place(&mut out[..k]);
    }
}

pub(crate) fn fit(set: &TrainingSet, params: &GbtParams, seed: u64) -> Result<GbtModel> {
    if !(params.subsample > 0.0 && params.subsample <= 1.0)
        || !(params.colsample_bytree > 0.0 && params.colsample_bytree <= 1.0)
        || !(params.learning_rate > 0.0)
    {
        return Err(Error::Parameter(format!("invalid boosting parameters {params:?}")));
    }
    let n = set.n_rows();
    let d = set.x.n_cols();
    let k = set.n_classes();
    let binned = BinnedMatrix::new(set.x);
    let tree_params = GradientTreeParams {
        max_depth: params.max_depth,
        lambda: params.lambda,
        min_samples_leaf: 1,
    };
    let n_rows_per_round = ((params.subsample * n as f64).round() as usize).clamp(1, n);
    let n_cols_per_tree = ((params.colsample_bytree * d as f64).ceil() as usize).clamp(1, d);

    let mut rng = task_rng(seed, &[]);
    let mut scores = vec![0.0; n * k];
    let mut grad = vec![vec![0.0; n]; k];
    let mut hess = vec![vec![0.0; n]; k];
    let mut p = vec![0.0; k];
    let mut rounds = Vec::with_capacity(params.n_estimators);

    for _ in 0..params.n_estimators {
        for i in 0..n {
            p.copy_from_slice(&scores[i * k..(i + 1) * k]);
            softmax_in_place(&mut p);
            let w = set.sample_weight[i];
            for c in 0..k {
                let target = if set.y[i] == c { 1.0 } else { 0.0 };
                grad[c][i] = w * (p[c] - target);
                hess[c][i] = w * (p[c] * (1.0 - p[c])).max(1e-16);
            }
        }
        let mut rows: Vec<usize> = if n_rows_per_round == n {
            (0..n).collect()
        } else {
            sample(&mut rng, n, n_rows_per_round).into_vec()
        };
        rows.sort_unstable();
        let mut round = Vec::with_capacity(k);
        for c in 0..k {
            let mut features: Vec<usize> = if n_cols_per_tree == d {
                (0..d).collect()
            } else {
                sample(&mut rng, d, n_cols_per_tree).into_vec()
            };
            features.sort_unstable();
            let tree = grow_gradient_tree(&binned, &rows, &grad[c], &hess[c], &features, &tree_params);
            for i in 0..n {
                scores[i * k + c] += params.learning_rate * tree.leaf(set.x.row(i));
            }
            round.push(tree);
        }
        rounds.push(round);
    }
    Ok(GbtModel {
        n_classes: k,
        learning_rate: params.learning_rate,
        rounds,
    })
}

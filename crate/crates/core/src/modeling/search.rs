//! Randomized hyperparameter search over expanding-window CV folds.

use std::io::Write;

use rand::seq::IndexedRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::ScoreMetric;
use super::split::CvFold;
use super::{class_weights, train, ClassProbabilities, ClassifierSpec, Family, ForestParams, GbtParams, Hyperparams, MaxFeatures};
use crate::emotion_features::FeatureMatrix;
use crate::error::{Error, Result};
use crate::labeling::{class_distribution, Overreaction};
use crate::rng::{derive_seed, task_rng};

pub const DEFAULT_N_ITER: usize = 20;

/// Draws one configuration. Families without a search space always return
/// their defaults.
pub fn sample_hyperparams(family: Family, rng: &mut impl Rng) -> Hyperparams {
    match family {
        Family::GradientBoostedTrees => Hyperparams::Gbt(GbtParams {
            n_estimators: rng.random_range(50..=150),
            max_depth: rng.random_range(3..=8),
            learning_rate: rng.random_range(0.01..0.11),
            subsample: rng.random_range(0.7..=1.0),
            colsample_bytree: rng.random_range(0.7..=1.0),
            ..GbtParams::default()
        }),
        Family::RandomForest => Hyperparams::Forest(ForestParams {
            n_estimators: rng.random_range(50..=200),
            max_depth: rng.random_range(3..=10),
            max_features: *[MaxFeatures::Sqrt, MaxFeatures::Log2, MaxFeatures::All].choose(rng).unwrap(),
            min_samples_split: rng.random_range(2..=10),
            min_samples_leaf: rng.random_range(1..=5),
        }),
        other => other.default_hyperparams(),
    }
}

pub fn has_search_space(family: Family) -> bool {
    matches!(family, Family::GradientBoostedTrees | Family::RandomForest)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub config_id: usize,
    pub fold: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ClassifierSpec,
    pub best_config_id: usize,
    pub configs: Vec<ClassifierSpec>,
    pub mean_scores: Vec<f64>,
    pub table: Vec<CvRow>,
    /// `(config_id, fold)` pairs scored with the prior baseline because the
    /// fold's fit window held a single class.
    pub degenerate_folds: Vec<(usize, usize)>,
}

fn fold_score(
    spec: &ClassifierSpec,
    x: &FeatureMatrix,
    labels: &[Overreaction],
    fold: &CvFold,
    metric: ScoreMetric,
) -> Result<(f64, bool)> {
    let fit_x = x.slice(fold.fit.clone());
    let fit_y = &labels[fold.fit.clone()];
    let val_x = x.slice(fold.validate.clone());
    let val_y = &labels[fold.validate.clone()];
    let weights = class_weights(&class_distribution(fit_y)?);
    let (probs, degenerate): (Vec<ClassProbabilities>, bool) = match train(spec, &fit_x, fit_y, &weights) {
        Ok(m) => (m.predict_proba(&val_x)?, false),
        Err(Error::DegenerateModel(_)) => {
            let prior = train(&ClassifierSpec::default_for(Family::PriorBaseline, spec.seed), &fit_x, fit_y, &weights)?;
            (prior.predict_proba(&val_x)?, true)
        }
        Err(e) => return Err(e),
    };
    Ok((metric.score(val_y, &probs)?, degenerate))
}

/// Configurations are drawn sequentially from one stream seeded by `seed`;
/// config `i` trains with seed `derive_seed(seed, [i])`. The winner maximizes
/// the mean fold score, ties going to fewer estimators, then shallower
/// trees, then the earlier draw.
pub fn randomized_search(
    family: Family,
    x: &FeatureMatrix,
    labels: &[Overreaction],
    folds: &[CvFold],
    n_iter: usize,
    seed: u64,
    metric: ScoreMetric,
) -> Result<SearchResult> {
    if n_iter == 0 {
        return Err(Error::Parameter("n_iter must be at least 1".into()));
    }
    if folds.is_empty() || folds.iter().any(|f| f.fit.is_empty() || f.validate.is_empty()) {
        return Err(Error::Parameter("randomized search needs non-empty folds".into()));
    }
    if x.n_rows() != labels.len() {
        return Err(Error::Schema(format!("{} rows but {} labels", x.n_rows(), labels.len())));
    }
    let n_configs = if has_search_space(family) { n_iter } else { 1 };
    let mut rng = task_rng(seed, &[]);
    let configs: Vec<ClassifierSpec> = (0..n_configs)
        .map(|i| ClassifierSpec::new(sample_hyperparams(family, &mut rng), derive_seed(seed, &[i as u64])))
        .collect();

    let tasks: Vec<(usize, usize)> = (0..n_configs)
        .flat_map(|c| (0..folds.len()).map(move |f| (c, f)))
        .collect();
    let scored: Vec<Result<(f64, bool)>> = tasks
        .par_iter()
        .map(|&(c, f)| fold_score(&configs[c], x, labels, &folds[f], metric))
        .collect();

    let mut table = Vec::with_capacity(tasks.len());
    let mut degenerate_folds = Vec::new();
    for (&(c, f), r) in tasks.iter().zip(scored) {
        let (score, degenerate) = r?;
        if degenerate {
            degenerate_folds.push((c, f));
        }
        table.push(CvRow {
            config_id: c,
            fold: f,
            score,
        });
    }
    let mean_scores: Vec<f64> = (0..n_configs)
        .map(|c| {
            let s: Vec<f64> = table.iter().filter(|r| r.config_id == c).map(|r| r.score).collect();
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect();

    let key = |c: usize| {
        let h = &configs[c].hyperparams;
        (h.n_estimators().unwrap_or(0), h.max_depth().unwrap_or(0), c)
    };
    let best_config_id = (0..n_configs)
        .min_by(|&a, &b| {
            mean_scores[b]
                .total_cmp(&mean_scores[a])
                .then_with(|| key(a).cmp(&key(b)))
        })
        .unwrap();
    Ok(SearchResult {
        best: configs[best_config_id].clone(),
        best_config_id,
        configs,
        mean_scores,
        table,
        degenerate_folds,
    })
}

pub fn write_cv_csv<W: Write>(writer: W, table: &[CvRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["config_id", "fold", "score"])?;
    for r in table {
        w.write_record([r.config_id.to_string(), r.fold.to_string(), format!("{}", r.score)])?;
    }
    w.flush()?;
    Ok(())
}

//! Leakage-safe splitting, class weighting and pluggable three-class
//! probabilistic classifiers.
//!
//! Internally classes use the model code order `[neutral, up, down]`. A model
//! trains only on the classes present in its training labels and reports
//! probability 0 for the others.

pub mod forest;
pub mod gbt;
pub mod logistic;
pub mod mlp;
pub mod report;
pub mod search;
pub mod split;
pub mod tree;

use serde::{Deserialize, Serialize};

use crate::emotion_features::FeatureMatrix;
use crate::error::{Error, Result};
use crate::labeling::{ClassDistribution, Overreaction};

pub use forest::{ForestModel, ForestParams, MaxFeatures};
pub use gbt::{GbtModel, GbtParams};
pub use logistic::{LogisticModel, LogisticParams};
pub use mlp::{MlpModel, MlpParams};
pub use report::{classification_report, predicted_class, ClassificationReport, ScoreMetric};
pub use search::{randomized_search, CvRow, SearchResult};
pub use split::{chronological_split, expanding_cv_folds, CvFold, DatasetSplit, SplitSpec};

pub const MODEL_ARTIFACT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub p_down: f64,
    pub p_neutral: f64,
    pub p_up: f64,
}

impl ClassProbabilities {
    /// From `[neutral, up, down]`.
    pub fn from_model_order(p: [f64; 3]) -> Self {
        ClassProbabilities {
            p_neutral: p[0],
            p_up: p[1],
            p_down: p[2],
        }
    }

    pub fn model_order(&self) -> [f64; 3] {
        [self.p_neutral, self.p_up, self.p_down]
    }

    pub fn get(&self, s: Overreaction) -> f64 {
        match s {
            Overreaction::Down => self.p_down,
            Overreaction::Neutral => self.p_neutral,
            Overreaction::Up => self.p_up,
        }
    }

    pub fn is_simplex(&self, tol: f64) -> bool {
        let p = self.model_order();
        p.iter().all(|v| (0.0..=1.0).contains(v)) && (p.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

/// Inverse-frequency weights indexed by model code, mean 1 over present classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(pub [f64; 3]);

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights([1.0; 3])
    }

    pub fn get(&self, s: Overreaction) -> f64 {
        self.0[s.model_code()]
    }
}

/// `w_k ∝ 1 / freq_k`, rescaled so present classes average 1; absent classes get 0.
pub fn class_weights(dist: &ClassDistribution) -> ClassWeights {
    let f = dist.by_model_code();
    let raw: Vec<f64> = f.iter().map(|&x| if x > 0.0 { 1.0 / x } else { 0.0 }).collect();
    let present = f.iter().filter(|&&x| x > 0.0).count().max(1);
    let mean = raw.iter().sum::<f64>() / present as f64;
    ClassWeights([raw[0] / mean, raw[1] / mean, raw[2] / mean])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    PriorBaseline,
    MultinomialLogistic,
    RandomForest,
    GradientBoostedTrees,
    FeedForwardNet,
}

impl Family {
    pub const ALL: [Family; 5] = [
        Family::PriorBaseline,
        Family::MultinomialLogistic,
        Family::RandomForest,
        Family::GradientBoostedTrees,
        Family::FeedForwardNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::PriorBaseline => "prior-baseline",
            Family::MultinomialLogistic => "multinomial-logistic",
            Family::RandomForest => "random-forest",
            Family::GradientBoostedTrees => "gradient-boosted-trees",
            Family::FeedForwardNet => "feed-forward-net",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model family `{s}`")))
    }

    pub fn default_hyperparams(self) -> Hyperparams {
        match self {
            Family::PriorBaseline => Hyperparams::Prior,
            Family::MultinomialLogistic => Hyperparams::Logistic(LogisticParams::default()),
            Family::RandomForest => Hyperparams::Forest(ForestParams::default()),
            Family::GradientBoostedTrees => Hyperparams::Gbt(GbtParams::default()),
            Family::FeedForwardNet => Hyperparams::Mlp(MlpParams::default()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Hyperparams {
    Prior,
    Logistic(LogisticParams),
    Forest(ForestParams),
    Gbt(GbtParams),
    Mlp(MlpParams),
}

impl Hyperparams {
    pub fn family(&self) -> Family {
        match self {
            Hyperparams::Prior => Family::PriorBaseline,
            Hyperparams::Logistic(_) => Family::MultinomialLogistic,
            Hyperparams::Forest(_) => Family::RandomForest,
            Hyperparams::Gbt(_) => Family::GradientBoostedTrees,
            Hyperparams::Mlp(_) => Family::FeedForwardNet,
        }
    }

    pub fn n_estimators(&self) -> Option<usize> {
        match self {
            Hyperparams::Forest(p) => Some(p.n_estimators),
            Hyperparams::Gbt(p) => Some(p.n_estimators),
            _ => None,
        }
    }

    pub fn max_depth(&self) -> Option<usize> {
        match self {
            Hyperparams::Forest(p) => Some(p.max_depth),
            Hyperparams::Gbt(p) => Some(p.max_depth),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub hyperparams: Hyperparams,
    pub seed: u64,
}

impl ClassifierSpec {
    pub fn new(hyperparams: Hyperparams, seed: u64) -> Self {
        ClassifierSpec { hyperparams, seed }
    }

    pub fn default_for(family: Family, seed: u64) -> Self {
        Self::new(family.default_hyperparams(), seed)
    }

    pub fn family(&self) -> Family {
        self.hyperparams.family()
    }
}

/// Training rows in compact class indices with per-row weights.
pub struct TrainingSet<'a> {
    pub x: &'a FeatureMatrix,
    /// Index into `classes` for every row.
    pub y: Vec<usize>,
    pub sample_weight: Vec<f64>,
    /// Model codes of the classes present, ascending.
    pub classes: Vec<usize>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(x: &'a FeatureMatrix, labels: &[Overreaction], weights: &ClassWeights) -> Result<Self> {
        if x.n_rows() != labels.len() {
            return Err(Error::Schema(format!(
                "{} feature rows but {} labels",
                x.n_rows(),
                labels.len()
            )));
        }
        if labels.is_empty() {
            return Err(Error::EmptySeries("no training rows"));
        }
        let mut present = [false; 3];
        for l in labels {
            present[l.model_code()] = true;
        }
        let classes: Vec<usize> = (0..3).filter(|&c| present[c]).collect();
        let mut compact = [usize::MAX; 3];
        for (i, &c) in classes.iter().enumerate() {
            compact[c] = i;
        }
        let y = labels.iter().map(|l| compact[l.model_code()]).collect();
        let sample_weight = labels
            .iter()
            .map(|l| {
                let w = weights.get(*l);
                if w > 0.0 {
                    w
                } else {
                    1.0
                }
            })
            .collect();
        Ok(TrainingSet {
            x,
            y,
            sample_weight,
            classes,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedParams {
    Prior { probabilities: [f64; 3] },
    Logistic(LogisticModel),
    Forest(ForestModel),
    Gbt(GbtModel),
    Mlp(MlpModel),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub n_rows: usize,
    pub class_weights: [f64; 3],
    pub iterations: Option<usize>,
    pub stopping_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    pub spec: ClassifierSpec,
    pub schema: Vec<String>,
    /// Model codes of the classes the model was fitted on.
    pub classes: Vec<usize>,
    pub params: FittedParams,
    pub metadata: TrainingMetadata,
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        self.spec.family()
    }

    /// Probabilities in model code order for one raw feature row.
    pub fn predict_row(&self, x: &[f64]) -> [f64; 3] {
        let mut compact = [0.0; 3];
        match &self.params {
            FittedParams::Prior { probabilities } => return *probabilities,
            FittedParams::Logistic(m) => m.predict_into(x, &mut compact),
            FittedParams::Forest(m) => m.predict_into(x, &mut compact),
            FittedParams::Gbt(m) => m.predict_into(x, &mut compact),
            FittedParams::Mlp(m) => m.predict_into(x, &mut compact),
        }
        let mut out = [0.0; 3];
        for (i, &c) in self.classes.iter().enumerate() {
            out[c] = compact[i];
        }
        out
    }

    pub fn predict_proba(&self, x: &FeatureMatrix) -> Result<Vec<ClassProbabilities>> {
        x.check_schema(&self.schema)?;
        Ok(x.rows()
            .map(|r| ClassProbabilities::from_model_order(self.predict_row(r)))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: TrainedModel = serde_json::from_str(s)?;
        if m.version != MODEL_ARTIFACT_VERSION {
            return Err(Error::Config(format!(
                "model artifact version {} is not supported (expected {MODEL_ARTIFACT_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }
}

/// Fits `spec` on `(x, labels)` with per-class loss weights.
pub fn train(spec: &ClassifierSpec, x: &FeatureMatrix, labels: &[Overreaction], weights: &ClassWeights) -> Result<TrainedModel> {
    let set = TrainingSet::new(x, labels, weights)?;
    let family = spec.family();
    if family != Family::PriorBaseline && set.n_classes() < 2 {
        return Err(Error::DegenerateModel(format!(
            "{} needs at least two classes, training labels contain only {:?}",
            family.name(),
            Overreaction::from_model_code(set.classes[0])
        )));
    }
    let mut metadata = TrainingMetadata {
        n_rows: set.n_rows(),
        class_weights: weights.0,
        ..TrainingMetadata::default()
    };
    let params = match &spec.hyperparams {
        Hyperparams::Prior => {
            let dist = crate::labeling::class_distribution(labels)?;
            FittedParams::Prior {
                probabilities: dist.by_model_code(),
            }
        }
        Hyperparams::Logistic(p) => {
            let (m, iters) = logistic::fit(&set, p)?;
            metadata.iterations = Some(iters);
            FittedParams::Logistic(m)
        }
        Hyperparams::Forest(p) => FittedParams::Forest(forest::fit(&set, p, spec.seed)?),
        Hyperparams::Gbt(p) => FittedParams::Gbt(gbt::fit(&set, p, spec.seed)?),
        Hyperparams::Mlp(p) => {
            let (m, epoch) = mlp::fit(&set, p, spec.seed)?;
            metadata.stopping_epoch = Some(epoch);
            FittedParams::Mlp(m)
        }
    };
    Ok(TrainedModel {
        version: MODEL_ARTIFACT_VERSION,
        spec: spec.clone(),
        schema: x.schema.clone(),
        classes: set.classes.clone(),
        params,
        metadata,
    })
}

pub fn predict_proba(model: &TrainedModel, x: &FeatureMatrix) -> Result<Vec<ClassProbabilities>> {
    model.predict_proba(x)
}

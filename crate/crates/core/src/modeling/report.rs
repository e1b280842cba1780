//! Predicted classes, confusion matrices and CV scores.

use serde::{Deserialize, Serialize};

use super::{ClassProbabilities, TrainedModel};
use crate::emotion_features::FeatureMatrix;
use crate::error::{Error, Result};
use crate::labeling::Overreaction;

/// Argmax; any tie for the maximum resolves to Neutral.
pub fn predicted_class(p: &ClassProbabilities) -> Overreaction {
    let [n, u, d] = p.model_order();
    if u > n && u > d {
        Overreaction::Up
    } else if d > n && d > u {
        Overreaction::Down
    } else {
        Overreaction::Neutral
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`, indexed by model code.
    pub confusion: [[usize; 3]; 3],
    /// Indexed by model code; `None` when the class appears in neither the
    /// labels nor the predictions.
    pub precision: [Option<f64>; 3],
    pub recall: [Option<f64>; 3],
    pub f1: [Option<f64>; 3],
}

impl ClassificationReport {
    pub fn from_predictions(truth: &[Overreaction], predicted: &[Overreaction]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Schema(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::EmptySeries("classification report"));
        }
        let mut confusion = [[0usize; 3]; 3];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[t.model_code()][p.model_code()] += 1;
        }
        let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
        let mut precision = [None; 3];
        let mut recall = [None; 3];
        let mut f1 = [None; 3];
        for c in 0..3 {
            let actual: usize = confusion[c].iter().sum();
            let claimed: usize = (0..3).map(|t| confusion[t][c]).sum();
            if actual == 0 && claimed == 0 {
                continue;
            }
            let tp = confusion[c][c] as f64;
            let p = if claimed > 0 { tp / claimed as f64 } else { 0.0 };
            let r = if actual > 0 { tp / actual as f64 } else { 0.0 };
            precision[c] = Some(p);
            recall[c] = Some(r);
            f1[c] = Some(if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 });
        }
        Ok(ClassificationReport {
            n: truth.len(),
            accuracy: correct as f64 / truth.len() as f64,
            confusion,
            precision,
            recall,
            f1,
        })
    }

    /// Mean F1 over the classes that are defined.
    pub fn macro_f1(&self) -> f64 {
        let defined: Vec<f64> = self.f1.iter().flatten().copied().collect();
        defined.iter().sum::<f64>() / defined.len() as f64
    }

    pub fn precision_of(&self, s: Overreaction) -> Option<f64> {
        self.precision[s.model_code()]
    }

    pub fn recall_of(&self, s: Overreaction) -> Option<f64> {
        self.recall[s.model_code()]
    }
}

pub fn classification_report(model: &TrainedModel, x: &FeatureMatrix, y: &[Overreaction]) -> Result<ClassificationReport> {
    let predicted: Vec<Overreaction> = model.predict_proba(x)?.iter().map(predicted_class).collect();
    ClassificationReport::from_predictions(y, &predicted)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMetric {
    #[default]
    MacroF1,
    Accuracy,
    NegLogLoss,
}

impl ScoreMetric {
    /// Higher is better for every metric.
    pub fn score(self, truth: &[Overreaction], probs: &[ClassProbabilities]) -> Result<f64> {
        match self {
            ScoreMetric::MacroF1 | ScoreMetric::Accuracy => {
                let predicted: Vec<_> = probs.iter().map(predicted_class).collect();
                let r = ClassificationReport::from_predictions(truth, &predicted)?;
                Ok(if self == ScoreMetric::Accuracy {
                    r.accuracy
                } else {
                    r.macro_f1()
                })
            }
            ScoreMetric::NegLogLoss => {
                if truth.is_empty() || truth.len() != probs.len() {
                    return Err(Error::Schema("log-loss needs one probability row per label".into()));
                }
                let ll: f64 = truth
                    .iter()
                    .zip(probs)
                    .map(|(t, p)| -p.get(*t).clamp(1e-15, 1.0).ln())
                    .sum();
                Ok(-ll / truth.len() as f64)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Overreaction::*;

    fn probs(n: f64, u: f64, d: f64) -> ClassProbabilities {
        ClassProbabilities::from_model_order([n, u, d])
    }

    #[test]
    fn ties_go_to_neutral() {
        assert_eq!(predicted_class(&probs(0.2, 0.4, 0.4)), Neutral);
        assert_eq!(predicted_class(&probs(0.4, 0.4, 0.2)), Neutral);
        assert_eq!(predicted_class(&probs(0.3, 0.3, 0.4)), Down);
        assert_eq!(predicted_class(&probs(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)), Neutral);
    }

    #[test]
    fn perfect_predictions() {
        let y = vec![Up, Down, Neutral, Up];
        let r = ClassificationReport::from_predictions(&y, &y).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!(r.precision.iter().chain(&r.recall).all(|v| *v == Some(1.0)));
    }

    #[test]
    fn all_neutral_on_imbalanced_labels() {
        let mut y = vec![Neutral; 8];
        y.push(Up);
        y.push(Down);
        let p = vec![Neutral; 10];
        let r = ClassificationReport::from_predictions(&y, &p).unwrap();
        assert!((r.accuracy - 0.8).abs() < 1e-12);
        assert_eq!(r.recall_of(Up), Some(0.0));
    }

    #[test]
    fn absent_class_is_undefined() {
        let y = vec![Neutral, Up, Neutral];
        let p = vec![Neutral, Neutral, Up];
        let r = ClassificationReport::from_predictions(&y, &p).unwrap();
        assert_eq!(r.precision_of(Down), None);
        assert_eq!(r.recall_of(Down), None);
        assert_eq!(r.precision_of(Up), Some(0.0));
        assert_eq!(r.recall_of(Neutral), Some(0.5));
    }

    #[test]
    fn confusion_table_against_hand_count() {
        // (truth, predicted) signed pairs
        let pairs: [(i8, i8); 20] = [
            (0, 0), (0, 0), (0, 1), (0, -1), (0, 0), (1, 1), (1, 0), (1, 1), (-1, -1), (-1, 0),
            (0, 0), (1, -1), (-1, -1), (0, 1), (0, 0), (-1, 1), (1, 1), (0, 0), (-1, -1), (0, -1),
        ];
        let truth: Vec<_> = pairs.iter().map(|p| Overreaction::from_signed(p.0).unwrap()).collect();
        let pred: Vec<_> = pairs.iter().map(|p| Overreaction::from_signed(p.1).unwrap()).collect();
        let r = ClassificationReport::from_predictions(&truth, &pred).unwrap();
        // neutral: 10 true, 6 right; up: 5 true, 3 right; down: 5 true, 3 right
        assert_eq!(r.confusion[0], [6, 2, 2]);
        assert_eq!(r.confusion[1], [1, 3, 1]);
        assert_eq!(r.confusion[2], [1, 1, 3]);
        assert!((r.accuracy - 12.0 / 20.0).abs() < 1e-12);
        assert!((r.precision_of(Neutral).unwrap() - 6.0 / 8.0).abs() < 1e-12);
        assert!((r.precision_of(Up).unwrap() - 3.0 / 6.0).abs() < 1e-12);
        assert!((r.precision_of(Down).unwrap() - 3.0 / 6.0).abs() < 1e-12);
        assert!((r.recall_of(Up).unwrap() - 3.0 / 5.0).abs() < 1e-12);
        let f1_up = 2.0 * 0.5 * 0.6 / 1.1;
        let f1_n = 2.0 * 0.75 * 0.6 / 1.35;
        assert!((r.macro_f1() - (f1_n + 2.0 * f1_up) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn log_loss_metric() {
        let y = vec![Up, Neutral];
        let p = vec![probs(0.25, 0.5, 0.25), probs(1.0, 0.0, 0.0)];
        let s = ScoreMetric::NegLogLoss.score(&y, &p).unwrap();
        assert!((s - (0.5f64.ln()) / 2.0).abs() < 1e-12);
    }
}

//! Multinomial logistic regression fitted by full-batch gradient descent
//! with backtracking line search.

use serde::{Deserialize, Serialize};

use super::{softmax_in_place, TrainingSet};
use crate::emotion_features::FeatureMatrix;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub max_iter: usize,
    pub tolerance: f64,
    pub l2: f64,
}

impl Default for LogisticParams {
    fn default() -> Self {
        LogisticParams {
            max_iter: 5000,
            tolerance: 1e-6,
            l2: 0.0,
        }
    }
}

/// Row-major `k × (d + 1)` coefficients; the last column is the intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub n_classes: usize,
    pub n_features: usize,
    pub coef: Vec<f64>,
}

impl LogisticModel {
    fn scores(coef: &[f64], k: usize, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for c in 0..k {
            let w = &coef[c * (d + 1)..(c + 1) * (d + 1)];
            out[c] = w[d] + w[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub(crate) fn predict_into(&self, x: &[f64], out: &mut [f64; 3]) {
        let k = self.n_classes;
        Self::scores(&self.coef, k, x, &mut out[..k]);
        softmax_in_place(&mut out[..k]);
    }
}

/// Weighted mean cross-entropy (plus optional L2 on non-intercept terms)
/// and its gradient with respect to the flattened coefficients.
pub fn loss_and_gradient(
    coef: &[f64],
    x: &FeatureMatrix,
    y: &[usize],
    sample_weight: &[f64],
    n_classes: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let d = x.n_cols();
    let k = n_classes;
    let mut grad = vec![0.0; k * (d + 1)];
    let mut loss = 0.0;
    let mut wsum = 0.0;
    let mut p = vec![0.0; k];
    for (i, row) in x.rows().enumerate() {
        let w = sample_weight[i];
        wsum += w;
        LogisticModel::scores(coef, k, row, &mut p);
        softmax_in_place(&mut p);
        loss -= w * p[y[i]].max(f64::MIN_POSITIVE).ln();
        for c in 0..k {
            let r = w * (p[c] - if c == y[i] { 1.0 } else { 0.0 });
            let g = &mut grad[c * (d + 1)..(c + 1) * (d + 1)];
            for j in 0..d {
                g[j] += r * row[j];
            }
            g[d] += r;
        }
    }
    loss /= wsum;
    grad.iter_mut().for_each(|g| *g /= wsum);
    if l2 > 0.0 {
        for c in 0..k {
            for j in 0..d {
                let idx = c * (d + 1) + j;
                loss += 0.5 * l2 * coef[idx] * coef[idx];
                grad[idx] += l2 * coef[idx];
            }
        }
    }
    (loss, grad)
}

pub(crate) fn fit(set: &TrainingSet, params: &LogisticParams) -> Result<(LogisticModel, usize)> {
    let k = set.n_classes();
    let d = set.x.n_cols();
    let mut coef = vec![0.0; k * (d + 1)];
    let eval = |c: &[f64]| loss_and_gradient(c, set.x, &set.y, &set.sample_weight, k, params.l2);
    let (mut loss, mut grad) = eval(&coef);
    let mut step = 1.0;
    let mut iterations = 0;
    while iterations < params.max_iter {
        let gnorm2: f64 = grad.iter().map(|g| g * g).sum();
        if gnorm2.sqrt() < params.tolerance {
            break;
        }
        iterations += 1;
        step *= 2.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = coef.iter().zip(&grad).map(|(c, g)| c - step * g).collect();
            let (tl, tg) = eval(&trial);
            if tl <= loss - 0.5 * step * gnorm2 {
                coef = trial;
                loss = tl;
                grad = tg;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok((
        LogisticModel {
            n_classes: k,
            n_features: d,
            coef,
        },
        iterations,
    ))
}

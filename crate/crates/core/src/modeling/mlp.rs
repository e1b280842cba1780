//! Feed-forward network `d → 64 → 32 → K` with ReLU, inverted dropout and a
//! softmax output, trained with Adam on the weighted cross-entropy.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainingSet;
use crate::emotion_features::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{task_rng, TaskRng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Chronological tail of the training rows held out for early stopping.
    pub validation_fraction: f64,
}

impl Default for MlpParams {
    fn default() -> Self {
        MlpParams {
            hidden: vec![64, 32],
            dropout: 0.3,
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 5,
            validation_fraction: 0.2,
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPSILON: f64 = 1e-7;

/// Weights are stored layer by layer as `W` (out × in, row-major) then `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub sizes: Vec<usize>,
    pub weights: Vec<f64>,
}

struct Workspace {
    acts: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(sizes: &[usize]) -> Self {
        Workspace {
            acts: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            masks: sizes.iter().map(|&s| vec![1.0; s]).collect(),
            deltas: sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }
}

impl MlpModel {
    /// Glorot-uniform weights and zero biases.
    pub fn init(sizes: Vec<usize>, rng: &mut impl Rng) -> Self {
        let mut weights = Vec::new();
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            weights.extend(std::iter::repeat_n(0.0, fan_out));
        }
        MlpModel { sizes, weights }
    }

    pub fn n_params(&self) -> usize {
        self.weights.len()
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = vec![0];
        for l in 0..self.sizes.len() - 1 {
            let last = *off.last().unwrap();
            off.push(last + self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1]);
        }
        off
    }

    fn forward(&self, off: &[usize], x: &[f64], ws: &mut Workspace) {
        ws.acts[0].copy_from_slice(x);
        let n_layers = self.sizes.len() - 1;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.weights[off[l]..off[l] + n_in * n_out];
            let b = &self.weights[off[l] + n_in * n_out..off[l + 1]];
            let (prev, rest) = ws.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut rest[0];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                out[o] = b[o] + row.iter().zip(input).map(|(a, v)| a * v).sum::<f64>();
            }
            if l + 1 < n_layers {
                for (v, m) in out.iter_mut().zip(&ws.masks[l + 1]) {
                    *v = v.max(0.0) * m;
                }
            } else {
                super::softmax_in_place(out);
            }
        }
    }

    /// Adds `scale * ∂CE/∂θ` for one sample whose forward pass is in `ws`.
    fn backward(&self, off: &[usize], y: usize, scale: f64, ws: &mut Workspace, grad: &mut [f64]) {
        let n_layers = self.sizes.len() - 1;
        {
            let out = &ws.acts[n_layers];
            let d = &mut ws.deltas[n_layers];
            for (c, (dv, p)) in d.iter_mut().zip(out).enumerate() {
                *dv = scale * (p - if c == y { 1.0 } else { 0.0 });
            }
        }
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_off = off[l];
            let b_off = off[l] + n_in * n_out;
            for o in 0..n_out {
                let dv = ws.deltas[l + 1][o];
                if dv == 0.0 {
                    continue;
                }
                let g = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                for (gi, a) in g.iter_mut().zip(&ws.acts[l]) {
                    *gi += dv * a;
                }
                grad[b_off + o] += dv;
            }
            if l > 0 {
                let w = &self.weights[w_off..b_off];
                for i in 0..n_in {
                    let a = ws.acts[l][i];
                    ws.deltas[l][i] = if a > 0.0 {
                        let s: f64 = (0..n_out).map(|o| w[o * n_in + i] * ws.deltas[l + 1][o]).sum();
                        s * ws.masks[l][i]
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    pub(crate) fn predict_into(&self, x: &[f64], out: &mut [f64; 3]) {
        let off = self.offsets();
        let mut ws = Workspace::new(&self.sizes);
        self.forward(&off, x, &mut ws);
        let k = *self.sizes.last().unwrap();
        out[..k].copy_from_slice(&ws.acts[self.sizes.len() - 1]);
    }

    /// Weighted mean cross-entropy over `rows` with dropout disabled.
    pub fn loss_and_gradient(&self, x: &FeatureMatrix, y: &[usize], w: &[f64], rows: &[usize]) -> (f64, Vec<f64>) {
        let off = self.offsets();
        let mut ws = Workspace::new(&self.sizes);
        let mut grad = vec![0.0; self.weights.len()];
        let wsum: f64 = rows.iter().map(|&i| w[i]).sum();
        let mut loss = 0.0;
        for &i in rows {
            self.forward(&off, x.row(i), &mut ws);
            loss -= w[i] * ws.acts[self.sizes.len() - 1][y[i]].max(f64::MIN_POSITIVE).ln();
            self.backward(&off, y[i], w[i] / wsum, &mut ws, &mut grad);
        }
        (loss / wsum, grad)
    }

    fn loss(&self, x: &FeatureMatrix, y: &[usize], w: &[f64], rows: &[usize]) -> f64 {
        let off = self.offsets();
        let mut ws = Workspace::new(&self.sizes);
        let mut loss = 0.0;
        let mut wsum = 0.0;
        for &i in rows {
            self.forward(&off, x.row(i), &mut ws);
            loss -= w[i] * ws.acts[self.sizes.len() - 1][y[i]].max(f64::MIN_POSITIVE).ln();
            wsum += w[i];
        }
        loss / wsum
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
            theta[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPSILON);
        }
    }
}

fn draw_masks(ws: &mut Workspace, p: f64, rng: &mut TaskRng) {
    let n = ws.masks.len();
    for mask in &mut ws.masks[1..n - 1] {
        for m in mask.iter_mut() {
            *m = if p > 0.0 && rng.random::<f64>() < p { 0.0 } else { 1.0 / (1.0 - p) };
        }
    }
}

/// Returns the model restored to its best validation epoch and the epoch at
/// which training stopped.
pub(crate) fn fit(set: &TrainingSet, params: &MlpParams, seed: u64) -> Result<(MlpModel, usize)> {
    if !(0.0..1.0).contains(&params.dropout)
        || params.batch_size == 0
        || !(0.0..1.0).contains(&params.validation_fraction)
        || params.hidden.is_empty()
    {
        return Err(Error::Parameter(format!("invalid network parameters {params:?}")));
    }
    let n = set.n_rows();
    let n_val = (params.validation_fraction * n as f64).floor() as usize;
    let n_fit = n - n_val;
    if n_fit == 0 {
        return Err(Error::InsufficientData {
            what: "network training rows",
            needed: 1,
            got: 0,
        });
    }
    let mut sizes = vec![set.x.n_cols()];
    sizes.extend(&params.hidden);
    sizes.push(set.n_classes());

    let mut rng = task_rng(seed, &[]);
    let mut model = MlpModel::init(sizes, &mut rng);
    let off = model.offsets();
    let mut ws = Workspace::new(&model.sizes);
    let mut adam = Adam {
        m: vec![0.0; model.n_params()],
        v: vec![0.0; model.n_params()],
        t: 0,
        lr: params.learning_rate,
    };
    let val_rows: Vec<usize> = (n_fit..n).collect();
    let mut order: Vec<usize> = (0..n_fit).collect();
    let mut grad = vec![0.0; model.n_params()];
    let mut best = (f64::INFINITY, model.weights.clone());
    let mut since_best = 0;
    let mut epoch = 0;

    while epoch < params.max_epochs {
        epoch += 1;
        order.shuffle(&mut rng);
        for batch in order.chunks(params.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let wsum: f64 = batch.iter().map(|&i| set.sample_weight[i]).sum();
            for &i in batch {
                draw_masks(&mut ws, params.dropout, &mut rng);
                model.forward(&off, set.x.row(i), &mut ws);
                model.backward(&off, set.y[i], set.sample_weight[i] / wsum, &mut ws, &mut grad);
            }
            adam.step(&mut model.weights, &grad);
        }
        if val_rows.is_empty() {
            continue;
        }
        let val_loss = model.loss(set.x, &set.y, &set.sample_weight, &val_rows);
        if val_loss < best.0 {
            best = (val_loss, model.weights.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= params.patience {
                break;
            }
        }
    }
    if !val_rows.is_empty() {
        model.weights = best.1;
    }
    Ok((model, epoch))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = task_rng(11, &[]);
        let x = FeatureMatrix::anonymous(4, (0..20).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = vec![0, 1, 2, 1, 0];
        let w = vec![0.5, 1.5, 1.0, 2.0, 0.7];
        let rows: Vec<usize> = (0..5).collect();
        let mut m = MlpModel::init(vec![4, 6, 5, 3], &mut rng);
        // non-zero biases so no ReLU sits exactly at its kink
        let nb = m.n_params();
        for v in m.weights.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
        let (_, g) = m.loss_and_gradient(&x, &y, &w, &rows);
        let h = 1e-6;
        for j in 0..nb {
            let orig = m.weights[j];
            m.weights[j] = orig + h;
            let lp = m.loss(&x, &y, &w, &rows);
            m.weights[j] = orig - h;
            let lm = m.loss(&x, &y, &w, &rows);
            m.weights[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let denom = fd.abs().max(g[j].abs()).max(1e-8);
            assert!((fd - g[j]).abs() / denom < 1e-4 || (fd - g[j]).abs() < 1e-9, "param {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn learns_xor_like_pattern() {
        let mut rng = task_rng(5, &[]);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..400 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            data.extend([a, b]);
            labels.push(if a * b > 0.0 {
                crate::labeling::Overreaction::Up
            } else {
                crate::labeling::Overreaction::Neutral
            });
        }
        let x = FeatureMatrix::anonymous(2, data).unwrap();
        let set = TrainingSet::new(&x, &labels, &super::super::ClassWeights::uniform()).unwrap();
        let params = MlpParams {
            learning_rate: 1e-2,
            ..MlpParams::default()
        };
        let (m, _) = fit(&set, &params, 1).unwrap();
        let mut correct = 0;
        for i in 0..x.n_rows() {
            let mut p = [0.0; 3];
            m.predict_into(x.row(i), &mut p);
            let pred = if p[1] > p[0] { 1 } else { 0 };
            correct += (pred == set.y[i]) as usize;
        }
        assert!(correct as f64 / 400.0 > 0.85, "accuracy {}", correct as f64 / 400.0);
    }
}

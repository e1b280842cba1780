//! Interventional Shapley values against a background sample.
//!
//! `v(S)` is the mean model output over background rows `b` evaluated at the
//! hybrid point taking features in `S` from `x` and the rest from `b`.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::emotion_features::FeatureMatrix;
use crate::error::{Error, Result};
use crate::labeling::Overreaction;
use crate::modeling::TrainedModel;
use crate::rng::task_rng;

pub const MAX_EXACT_FEATURES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ShapMethod {
    Exact,
    Sampled { permutations: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub base_value: f64,
    /// `f(x)`; equals `base_value + Σ attributions` for exact explanations.
    pub output: f64,
    pub attributions: Vec<f64>,
    /// Standard error of each sampled attribution.
    pub standard_errors: Option<Vec<f64>>,
    pub method: ShapMethod,
}

impl ShapExplanation {
    pub fn efficiency_gap(&self) -> f64 {
        self.base_value + self.attributions.iter().sum::<f64>() - self.output
    }
}

fn check_inputs(x: &[f64], background: &FeatureMatrix) -> Result<()> {
    if background.n_rows() == 0 {
        return Err(Error::EmptySeries("shapley background"));
    }
    if background.n_cols() != x.len() {
        return Err(Error::Schema(format!(
            "explained point has {} features, background has {}",
            x.len(),
            background.n_cols()
        )));
    }
    Ok(())
}

fn coalition_value<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], background: &FeatureMatrix, mask: u64, buf: &mut Vec<f64>) -> f64 {
    let mut total = 0.0;
    for b in background.rows() {
        buf.clear();
        buf.extend(b.iter().zip(x).enumerate().map(|(j, (bv, xv))| if mask >> j & 1 == 1 { *xv } else { *bv }));
        total += f(buf);
    }
    total / background.n_rows() as f64
}

/// Enumerates all `2^d` coalitions; `d` is limited to [`MAX_EXACT_FEATURES`].
pub fn shapley_exact<F>(f: &F, x: &[f64], background: &FeatureMatrix) -> Result<ShapExplanation>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_inputs(x, background)?;
    let d = x.len();
    if d > MAX_EXACT_FEATURES {
        return Err(Error::TooManyFeatures {
            d,
            max: MAX_EXACT_FEATURES,
        });
    }
    let n_masks = 1usize << d;
    let v: Vec<f64> = (0..n_masks as u64)
        .into_par_iter()
        .map_init(Vec::new, |buf, mask| coalition_value(f, x, background, mask, buf))
        .collect();

    // weight[s] = s! (d - s - 1)! / d!
    let mut weight = vec![0.0; d.max(1)];
    for (s, w) in weight.iter_mut().enumerate().take(d) {
        let mut r = 1.0 / d as f64;
        for k in 1..=s {
            r *= k as f64 / (d - k) as f64;
        }
        *w = r;
    }
    let attributions = (0..d)
        .map(|i| {
            let bit = 1usize << i;
            let mut phi = 0.0;
            for mask in 0..n_masks {
                if mask & bit == 0 {
                    phi += weight[(mask as u64).count_ones() as usize] * (v[mask | bit] - v[mask]);
                }
            }
            phi
        })
        .collect();
    Ok(ShapExplanation {
        base_value: v[0],
        output: f(x),
        attributions,
        standard_errors: None,
        method: ShapMethod::Exact,
    })
}

fn all_permutations(d: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..d).collect();
    loop {
        out.push(p.clone());
        // next lexicographic permutation
        let Some(i) = (1..d).rev().find(|&i| p[i - 1] < p[i]) else {
            return out;
        };
        let j = (i..d).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

fn factorial_at_most(d: usize, cap: usize) -> Option<usize> {
    let mut f: usize = 1;
    for k in 2..=d {
        f = f.checked_mul(k)?;
        if f > cap {
            return None;
        }
    }
    Some(f)
}

/// Permutation-sampling estimator. When `m ≥ d!` every permutation is used
/// once instead of sampling.
pub fn shapley_sampled<F>(f: &F, x: &[f64], background: &FeatureMatrix, m: usize, seed: u64) -> Result<ShapExplanation>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    check_inputs(x, background)?;
    if m == 0 {
        return Err(Error::Parameter("at least one permutation is required".into()));
    }
    let d = x.len();
    if d > 63 {
        return Err(Error::TooManyFeatures { d, max: 63 });
    }
    let perms: Vec<Vec<usize>> = match factorial_at_most(d, m) {
        Some(_) => all_permutations(d),
        None => {
            let mut rng = task_rng(seed, &[]);
            let mut p: Vec<usize> = (0..d).collect();
            (0..m)
                .map(|_| {
                    p.shuffle(&mut rng);
                    p.clone()
                })
                .collect()
        }
    };
    let mut cache: HashMap<u64, f64> = HashMap::new();
    let mut buf = Vec::new();
    let mut value = |mask: u64| -> f64 {
        *cache
            .entry(mask)
            .or_insert_with(|| coalition_value(f, x, background, mask, &mut buf))
    };
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for perm in &perms {
        let mut mask = 0u64;
        let mut prev = value(0);
        for &j in perm {
            mask |= 1 << j;
            let cur = value(mask);
            let delta = cur - prev;
            sum[j] += delta;
            sum_sq[j] += delta * delta;
            prev = cur;
        }
    }
    let n = perms.len() as f64;
    let attributions: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let standard_errors = (0..d)
        .map(|j| {
            if perms.len() < 2 {
                return f64::NAN;
            }
            let var = (sum_sq[j] - n * attributions[j] * attributions[j]) / (n - 1.0);
            (var.max(0.0) / n).sqrt()
        })
        .collect();
    Ok(ShapExplanation {
        base_value: value(0),
        output: f(x),
        attributions,
        standard_errors: Some(standard_errors),
        method: ShapMethod::Sampled {
            permutations: perms.len(),
        },
    })
}

/// Up to `n` distinct rows drawn without replacement, kept in time order.
pub fn sample_background(x: &FeatureMatrix, n: usize, seed: u64) -> FeatureMatrix {
    if x.n_rows() <= n {
        return x.clone();
    }
    let mut rng = task_rng(seed, &[]);
    let mut idx = sample(&mut rng, x.n_rows(), n).into_vec();
    idx.sort_unstable();
    x.select(&idx)
}

pub fn class_output(model: &TrainedModel, target: Overreaction) -> impl Fn(&[f64]) -> f64 + Sync + '_ {
    let code = target.model_code();
    move |row: &[f64]| model.predict_row(row)[code]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub feature: String,
    /// `(feature value, attribution)` for every explained row.
    pub points: Vec<(f64, f64)>,
    pub mean_abs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapSummary {
    pub class: Overreaction,
    pub features: Vec<FeatureSummary>,
    /// Feature indices by decreasing mean |attribution|, ties in schema order.
    pub ranking: Vec<usize>,
}

impl ShapSummary {
    pub fn ranked_names(&self) -> Vec<&str> {
        self.ranking.iter().map(|&j| self.features[j].feature.as_str()).collect()
    }
}

/// Exact explanations for every row of `rows`. `values` supplies the
/// feature values reported next to each attribution (for example the
/// unscaled features) and defaults to `rows` itself.
pub fn shap_summary<F>(
    f: &F,
    class: Overreaction,
    rows: &FeatureMatrix,
    values: Option<&FeatureMatrix>,
    background: &FeatureMatrix,
) -> Result<ShapSummary>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if rows.n_rows() == 0 {
        return Err(Error::EmptySeries("rows to explain"));
    }
    let values = values.unwrap_or(rows);
    if values.n_rows() != rows.n_rows() || values.n_cols() != rows.n_cols() {
        return Err(Error::Schema("feature values do not match the explained rows".into()));
    }
    let explanations = rows
        .rows()
        .map(|r| shapley_exact(f, r, background))
        .collect::<Result<Vec<_>>>()?;
    let d = rows.n_cols();
    let features: Vec<FeatureSummary> = (0..d)
        .map(|j| {
            let points: Vec<(f64, f64)> = explanations
                .iter()
                .enumerate()
                .map(|(i, e)| (values.get(i, j), e.attributions[j]))
                .collect();
            let mut abs: Vec<f64> = points.iter().map(|p| p.1.abs()).collect();
            abs.sort_by(f64::total_cmp);
            FeatureSummary {
                feature: rows.schema[j].clone(),
                mean_abs: abs.iter().sum::<f64>() / abs.len() as f64,
                points,
            }
        })
        .collect();
    let mut ranking: Vec<usize> = (0..d).collect();
    ranking.sort_by(|&a, &b| features[b].mean_abs.total_cmp(&features[a].mean_abs));
    Ok(ShapSummary {
        class,
        features,
        ranking,
    })
}

pub fn write_shap_csv<W: Write>(writer: W, summaries: &[ShapSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["class", "feature", "feature_value", "attribution"])?;
    for s in summaries {
        for f in &s.features {
            for (v, a) in &f.points {
                w.write_record([s.class.name(), f.feature.as_str(), &v.to_string(), &a.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn background() -> FeatureMatrix {
        FeatureMatrix::anonymous(3, vec![0.0, 1.0, 2.0, 1.0, -1.0, 0.5, 2.0, 0.0, -1.0, -0.5, 0.3, 0.7]).unwrap()
    }

    #[test]
    fn linear_model_attributions() {
        let w = [0.5, -2.0, 1.5];
        let f = |r: &[f64]| r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let bg = background();
        let x = [1.0, 2.0, -3.0];
        let e = shapley_exact(&f, &x, &bg).unwrap();
        for j in 0..3 {
            let mean_b: f64 = bg.rows().map(|r| r[j]).sum::<f64>() / bg.n_rows() as f64;
            assert!((e.attributions[j] - w[j] * (x[j] - mean_b)).abs() < 1e-12);
        }
        assert!(e.efficiency_gap().abs() < 1e-12);
    }

    #[test]
    fn null_player_and_symmetry() {
        let f = |r: &[f64]| (r[0] * r[1]).tanh();
        let bg = FeatureMatrix::anonymous(3, vec![0.2, 0.2, 5.0, -1.0, -1.0, 3.0, 0.5, 0.5, 1.0]).unwrap();
        let e = shapley_exact(&f, &[1.0, 1.0, -4.0], &bg).unwrap();
        assert_eq!(e.attributions[2], 0.0);
        assert!((e.attributions[0] - e.attributions[1]).abs() < 1e-12);
    }

    #[test]
    fn too_many_features_for_exact() {
        let bg = FeatureMatrix::anonymous(17, vec![0.0; 17]).unwrap();
        let r = shapley_exact(&|_: &[f64]| 0.0, &[0.0; 17], &bg);
        assert!(matches!(r, Err(Error::TooManyFeatures { d: 17, max: 16 })));
    }

    #[test]
    fn full_enumeration_matches_exact() {
        let f = |r: &[f64]| (r[0] * r[1] + r[2]).sin() + r[1] * r[1];
        let bg = background();
        let x = [0.3, -1.2, 2.0];
        let exact = shapley_exact(&f, &x, &bg).unwrap();
        let sampled = shapley_sampled(&f, &x, &bg, 6, 0).unwrap();
        assert_eq!(sampled.method, ShapMethod::Sampled { permutations: 6 });
        for (a, b) in exact.attributions.iter().zip(&sampled.attributions) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn permutation_enumeration() {
        let p = all_permutations(4);
        assert_eq!(p.len(), 24);
        let mut q = p.clone();
        q.sort();
        q.dedup();
        assert_eq!(q.len(), 24);
    }

    #[test]
    fn constant_model_summary() {
        let bg = background();
        let s = shap_summary(&|_: &[f64]| 0.25, Overreaction::Up, &bg, None, &bg).unwrap();
        assert!(s.features.iter().all(|f| f.points.iter().all(|p| p.1 == 0.0)));
        assert_eq!(s.ranking, vec![0, 1, 2]);
    }
}

//! Performance metrics, Sharpe-ratio comparison and Shapley attribution.
//!
//! All moments are population moments (divide by `T`).

pub mod shapley;

use std::io::Write;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::backtest::EquityCurve;
use crate::error::{Error, Result};
use crate::market_data::Frequency;

pub use shapley::{
    sample_background, shap_summary, shapley_exact, shapley_sampled, write_shap_csv, FeatureSummary, ShapExplanation,
    ShapMethod, ShapSummary, MAX_EXACT_FEATURES,
};

pub const TRADING_DAYS: f64 = 252.0;
pub const MIN_JK_OVERLAP: usize = 30;

/// `252 × N_i` with `N_i` = 390 / bar minutes (78 for 5-minute bars).
pub fn annualization_factor(freq: Frequency) -> Result<f64> {
    match freq.minutes() {
        1 | 5 | 10 | 15 => Ok(TRADING_DAYS * freq.intervals_per_day() as f64),
        m => Err(Error::Parameter(format!("no annualization basis for {m}-minute bars"))),
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn population_std(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Unannualized Sharpe ratio.
pub fn per_period_sharpe(returns: &[f64], rf: f64) -> Result<f64> {
    if returns.len() < 2 {
        return Err(Error::UndefinedMetric("sharpe ratio needs at least two returns"));
    }
    let excess: Vec<f64> = returns.iter().map(|r| r - rf).collect();
    let sd = population_std(&excess);
    if !(sd > 0.0) {
        return Err(Error::UndefinedMetric("sharpe ratio of a constant return series"));
    }
    Ok(mean(&excess) / sd)
}

pub fn sharpe(returns: &[f64], a: f64, rf: f64) -> Result<f64> {
    Ok(per_period_sharpe(returns, rf)? * a.sqrt())
}

pub fn sortino(returns: &[f64], a: f64, rf: f64) -> Result<f64> {
    if returns.is_empty() {
        return Err(Error::UndefinedMetric("sortino ratio of an empty series"));
    }
    let excess: Vec<f64> = returns.iter().map(|r| r - rf).collect();
    let downside = (excess.iter().map(|e| e.min(0.0).powi(2)).sum::<f64>() / excess.len() as f64).sqrt();
    if !(downside > 0.0) {
        return Err(Error::UndefinedMetric("sortino ratio without downside deviations"));
    }
    Ok(mean(&excess) / downside * a.sqrt())
}

/// Largest peak-to-trough loss as a fraction of the running peak.
pub fn max_drawdown(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySeries("equity curve"));
    }
    let mut peak = f64::NEG_INFINITY;
    let mut mdd: f64 = 0.0;
    for &v in values {
        peak = peak.max(v);
        if peak > 0.0 {
            mdd = mdd.max((peak - v) / peak);
        }
    }
    Ok(mdd.clamp(0.0, 1.0))
}

pub fn curve_drawdown(curve: &EquityCurve) -> Result<f64> {
    let mut v = vec![1.0];
    v.extend(curve.values());
    max_drawdown(&v)
}

/// Population skewness and raw (non-excess) kurtosis.
pub fn higher_moments(returns: &[f64]) -> Result<(f64, f64)> {
    if returns.is_empty() {
        return Err(Error::UndefinedMetric("moments of an empty series"));
    }
    let m = mean(returns);
    let n = returns.len() as f64;
    let m2 = returns.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n;
    if !(m2 > 0.0) {
        return Err(Error::UndefinedMetric("moments of a constant series"));
    }
    let m3 = returns.iter().map(|r| (r - m).powi(3)).sum::<f64>() / n;
    let m4 = returns.iter().map(|r| (r - m).powi(4)).sum::<f64>() / n;
    Ok((m3 / m2.powf(1.5), m4 / (m2 * m2)))
}

/// Metrics that cannot be computed are `None` rather than 0 or infinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub sharpe: Option<f64>,
    pub sortino: Option<f64>,
    pub max_drawdown: f64,
    pub skewness: Option<f64>,
    pub kurtosis: Option<f64>,
    /// Mean interval log-return times the annualization factor.
    pub annualized_return: f64,
    pub total_log_return: f64,
    pub n_trades: usize,
    pub n_intervals: usize,
}

pub fn perf_report(curve: &EquityCurve, n_trades: usize, a: f64) -> Result<PerfReport> {
    let r = curve.returns();
    if r.is_empty() {
        return Err(Error::EmptySeries("strategy returns"));
    }
    let moments = higher_moments(&r).ok();
    Ok(PerfReport {
        sharpe: sharpe(&r, a, 0.0).ok(),
        sortino: sortino(&r, a, 0.0).ok(),
        max_drawdown: curve_drawdown(curve)?,
        skewness: moments.map(|m| m.0),
        kurtosis: moments.map(|m| m.1),
        annualized_return: mean(&r) * a,
        total_log_return: r.iter().sum(),
        n_trades,
        n_intervals: r.len(),
    })
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

pub fn two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JkWinner {
    First,
    Second,
    Neither,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JKResult {
    /// Annualized, for reporting.
    pub sr1: f64,
    pub sr2: f64,
    pub sr1_period: f64,
    pub sr2_period: f64,
    pub rho: f64,
    pub n: usize,
    pub z: f64,
    pub p: f64,
    pub winner: JkWinner,
}

pub const JK_ALPHA: f64 = 0.05;

/// Sharpe-difference z-test on two aligned return series:
///
/// `z = (SR₁ − SR₂) / sqrt((2 + ½(SR₁² + SR₂² − 2ρ·SR₁·SR₂)) / N)`
///
/// with per-period Sharpe ratios. `a` only scales the reported Sharpes.
pub fn jobson_korkie(r1: &[f64], r2: &[f64], a: f64) -> Result<JKResult> {
    if r1.len() != r2.len() {
        return Err(Error::Alignment {
            message: format!("return series of length {} and {}", r1.len(), r2.len()),
            timestamps: Vec::new(),
        });
    }
    let n = r1.len();
    if n < MIN_JK_OVERLAP {
        return Err(Error::InsufficientOverlap { n, min: MIN_JK_OVERLAP });
    }
    let s1 = per_period_sharpe(r1, 0.0)?;
    let s2 = per_period_sharpe(r2, 0.0)?;
    let rho = pearson(r1, r2);
    let var = (2.0 + 0.5 * (s1 * s1 + s2 * s2 - 2.0 * rho * s1 * s2)) / n as f64;
    let z = (s1 - s2) / var.sqrt();
    let p = two_sided_p(z);
    let winner = if p >= JK_ALPHA {
        JkWinner::Neither
    } else if z > 0.0 {
        JkWinner::First
    } else {
        JkWinner::Second
    };
    Ok(JKResult {
        sr1: s1 * a.sqrt(),
        sr2: s2 * a.sqrt(),
        sr1_period: s1,
        sr2_period: s2,
        rho,
        n,
        z,
        p,
        winner,
    })
}

/// Restricts two timestamped series to their common timestamps.
pub fn align_on_timestamps(a: &[(NaiveDateTime, f64)], b: &[(NaiveDateTime, f64)]) -> (Vec<f64>, Vec<f64>) {
    let mut i = 0;
    let mut j = 0;
    let mut x = Vec::new();
    let mut y = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                x.push(a[i].1);
                y.push(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    (x, y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkRow {
    pub timeframe: String,
    pub comparison: String,
    pub model: String,
    pub ml_sharpe: f64,
    pub over_sharpe: f64,
    pub z: f64,
    pub p: f64,
    pub winner: String,
}

pub fn write_jk_csv<W: Write>(writer: W, rows: &[JkRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timeframe", "comparison", "model", "ml_sharpe", "over_sharpe", "z", "p", "winner"])?;
    for r in rows {
        w.write_record([
            r.timeframe.clone(),
            r.comparison.clone(),
            r.model.clone(),
            r.ml_sharpe.to_string(),
            r.over_sharpe.to_string(),
            r.z.to_string(),
            r.p.to_string(),
            r.winner.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

//! Rolling volatility and the three-state overreaction label.

use std::io::Write;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{format_timestamp, ReturnSeries};

pub const DEFAULT_TC: f64 = 0.001;
pub const DEFAULT_WINDOW: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelParams {
    pub theta: f64,
    /// One-way proportional cost in log-return units.
    pub tc: f64,
    pub window: usize,
    /// Include the current return in the volatility window.
    #[serde(default)]
    pub include_current: bool,
}

impl LabelParams {
    pub fn new(theta: f64, tc: f64, window: usize) -> Result<Self> {
        let p = LabelParams {
            theta,
            tc,
            window,
            include_current: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta.is_finite()) {
            return Err(Error::Parameter(format!("theta must be positive, got {}", self.theta)));
        }
        if !(self.tc >= 0.0 && self.tc.is_finite()) {
            return Err(Error::Parameter(format!("tc must be non-negative, got {}", self.tc)));
        }
        if self.window < 2 {
            return Err(Error::Parameter(format!("window must be at least 2, got {}", self.window)));
        }
        Ok(())
    }

    /// `theta * sigma + 2 * tc`
    pub fn barrier(&self, sigma: f64) -> f64 {
        self.theta * sigma + 2.0 * self.tc
    }
}

impl Default for LabelParams {
    fn default() -> Self {
        LabelParams {
            theta: 2.0,
            tc: DEFAULT_TC,
            window: DEFAULT_WINDOW,
            include_current: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolatilityPoint {
    pub timestamp: NaiveDateTime,
    pub sigma: f64,
    /// Index into the return series this estimate is attached to.
    pub return_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolatilitySeries {
    pub window: usize,
    pub include_current: bool,
    pub points: Vec<VolatilityPoint>,
}

/// Root mean square of the `window` returns preceding each point (or ending
/// at it when `include_current` is set). No mean is subtracted.
///
/// The window runs over the return series itself, so it may reach into the
/// previous trading day; overnight returns are never part of the series.
pub fn rolling_volatility(returns: &ReturnSeries, window: usize, include_current: bool) -> Result<VolatilitySeries> {
    let n = returns.len();
    if window == 0 || n < window {
        return Err(Error::InsufficientData {
            what: "rolling volatility",
            needed: window.max(1),
            got: n,
        });
    }
    let first = if include_current { window - 1 } else { window };
    let values = returns.values();
    let points = (first..n)
        .map(|k| {
            let end = if include_current { k + 1 } else { k };
            let ss: f64 = values[end - window..end].iter().map(|r| r * r).sum();
            VolatilityPoint {
                timestamp: returns.points[k].timestamp,
                sigma: (ss / window as f64).sqrt(),
                return_index: k,
            }
        })
        .collect();
    Ok(VolatilitySeries {
        window,
        include_current,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Overreaction {
    Down,
    Neutral,
    Up,
}

impl Overreaction {
    pub const ALL: [Overreaction; 3] = [Overreaction::Down, Overreaction::Neutral, Overreaction::Up];

    /// −1, 0, +1
    pub fn signed(self) -> i8 {
        match self {
            Overreaction::Down => -1,
            Overreaction::Neutral => 0,
            Overreaction::Up => 1,
        }
    }

    pub fn from_signed(v: i8) -> Option<Self> {
        match v {
            -1 => Some(Overreaction::Down),
            0 => Some(Overreaction::Neutral),
            1 => Some(Overreaction::Up),
            _ => None,
        }
    }

    /// Model class code: 0 neutral, 1 positive, 2 negative.
    pub fn model_code(self) -> usize {
        match self {
            Overreaction::Neutral => 0,
            Overreaction::Up => 1,
            Overreaction::Down => 2,
        }
    }

    pub fn from_model_code(c: usize) -> Option<Self> {
        match c {
            0 => Some(Overreaction::Neutral),
            1 => Some(Overreaction::Up),
            2 => Some(Overreaction::Down),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Overreaction::Down => "down",
            Overreaction::Neutral => "neutral",
            Overreaction::Up => "up",
        }
    }

    pub fn classify(ret: f64, barrier: f64) -> Self {
        if ret > barrier {
            Overreaction::Up
        } else if ret < -barrier {
            Overreaction::Down
        } else {
            Overreaction::Neutral
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverreactionLabel {
    /// Interval `t` whose information the label is conditioned on.
    pub origin: NaiveDateTime,
    /// Interval `t + 1` being labeled.
    pub timestamp: NaiveDateTime,
    pub state: Overreaction,
}

/// Labels `t + 1` from `r_{t+1}` against `theta * sigma_t + 2 tc`, with
/// strict inequalities. Pairs straddling an overnight gap are skipped.
pub fn label(returns: &ReturnSeries, vols: &VolatilitySeries, params: &LabelParams) -> Result<Vec<OverreactionLabel>> {
    params.validate()?;
    let mut out = Vec::with_capacity(vols.points.len());
    for v in &vols.points {
        let k = v.return_index;
        let (Some(cur), Some(next)) = (returns.points.get(k), returns.points.get(k + 1)) else {
            continue;
        };
        if cur.timestamp != v.timestamp {
            return Err(Error::Alignment {
                message: "volatility point does not match its return".into(),
                timestamps: vec![v.timestamp],
            });
        }
        if next.day_start {
            continue;
        }
        out.push(OverreactionLabel {
            origin: cur.timestamp,
            timestamp: next.timestamp,
            state: Overreaction::classify(next.value, params.barrier(v.sigma)),
        });
    }
    Ok(out)
}

/// θ ∈ {1.5, 2.0, …, 5.0}
pub fn theta_grid() -> Vec<f64> {
    (0..8).map(|i| 1.5 + 0.5 * i as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDistribution {
    pub down: f64,
    pub neutral: f64,
    pub up: f64,
}

impl ClassDistribution {
    pub fn get(&self, s: Overreaction) -> f64 {
        match s {
            Overreaction::Down => self.down,
            Overreaction::Neutral => self.neutral,
            Overreaction::Up => self.up,
        }
    }

    /// Frequencies indexed by model code.
    pub fn by_model_code(&self) -> [f64; 3] {
        [self.neutral, self.up, self.down]
    }
}

pub fn class_distribution(labels: &[Overreaction]) -> Result<ClassDistribution> {
    if labels.is_empty() {
        return Err(Error::EmptySeries("class distribution of no labels"));
    }
    let mut counts = [0usize; 3];
    for l in labels {
        counts[l.model_code()] += 1;
    }
    let n = labels.len() as f64;
    Ok(ClassDistribution {
        neutral: counts[0] as f64 / n,
        up: counts[1] as f64 / n,
        down: counts[2] as f64 / n,
    })
}

pub fn write_labels_csv<W: Write>(writer: W, labels: &[OverreactionLabel]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "label"])?;
    for l in labels {
        w.write_record([format_timestamp(l.timestamp), l.state.signed().to_string()])?;
    }
    w.flush()?;
    Ok(())
}

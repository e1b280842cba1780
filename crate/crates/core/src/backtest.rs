//! Turning class probabilities into positions and simulating them bar by bar.
//!
//! A decision taken at the close of bar `t` executes at the open of bar
//! `t + 1`. Positions never cross a day boundary: anything still open at the
//! close of a day's last bar, or of the sample's last bar, is closed there.
//! A trade costs `2·tc` in total, booked as `tc` on its entry interval and
//! `tc` on its exit interval.

use std::io::Write;

use chrono::NaiveDateTime;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{label, ClassDistribution, LabelParams, Overreaction, VolatilitySeries};
use crate::market_data::{format_timestamp, trading_day, BarSeries, ReturnSeries};
use crate::modeling::ClassProbabilities;
use crate::rng::task_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Signal {
    Long,
    Short,
    Flat,
}

impl Signal {
    pub fn sign(self) -> i8 {
        match self {
            Signal::Long => 1,
            Signal::Short => -1,
            Signal::Flat => 0,
        }
    }

    pub fn from_state(state: Overreaction) -> Self {
        match state {
            Overreaction::Up => Signal::Long,
            Overreaction::Down => Signal::Short,
            Overreaction::Neutral => Signal::Flat,
        }
    }

    fn opposite(self) -> Self {
        match self {
            Signal::Long => Signal::Short,
            Signal::Short => Signal::Long,
            Signal::Flat => Signal::Flat,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Long,
    Short,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Long => 1.0,
            Side::Short => -1.0,
        }
    }

    fn from_signal(s: Signal) -> Option<Side> {
        match s {
            Signal::Long => Some(Side::Long),
            Signal::Short => Some(Side::Short),
            Signal::Flat => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Long => "long",
            Side::Short => "short",
        }
    }
}

/// Long if `p_up > c`, short if `p_down > c`; when both clear the threshold
/// the larger wins and an exact tie stays flat.
pub fn generate_signals(probs: &[ClassProbabilities], c: f64) -> Vec<Signal> {
    probs
        .iter()
        .map(|p| {
            let up = p.p_up > c;
            let down = p.p_down > c;
            match (up, down) {
                (true, false) => Signal::Long,
                (false, true) => Signal::Short,
                (true, true) if p.p_up > p.p_down => Signal::Long,
                (true, true) if p.p_down > p.p_up => Signal::Short,
                _ => Signal::Flat,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "policy", content = "h", rename_all = "kebab-case")]
pub enum Holding {
    Fixed(usize),
    UntilOpposite,
}

impl Holding {
    pub fn label(self) -> String {
        match self {
            Holding::Fixed(h) => format!("fixed-{h}"),
            Holding::UntilOpposite => "until-opposite".to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalRule {
    pub threshold: f64,
    pub holding: Holding,
}

impl SignalRule {
    pub fn new(threshold: f64, holding: Holding) -> Result<Self> {
        let r = SignalRule { threshold, holding };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Parameter(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if self.holding == Holding::Fixed(0) {
            return Err(Error::Parameter("fixed holding period must be at least 1".into()));
        }
        Ok(())
    }
}

pub fn threshold_grid() -> Vec<f64> {
    (2..=8).map(|i| i as f64 / 10.0).collect()
}

pub fn holding_grid() -> Vec<Holding> {
    vec![
        Holding::Fixed(1),
        Holding::Fixed(5),
        Holding::Fixed(10),
        Holding::Fixed(15),
        Holding::UntilOpposite,
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub side: Side,
    pub entry_index: usize,
    pub entry_ts: NaiveDateTime,
    pub entry_px: f64,
    pub exit_index: usize,
    pub exit_ts: NaiveDateTime,
    pub exit_px: f64,
    pub gross: f64,
    pub cost: f64,
    pub net: f64,
}

/// An until-opposite reversal: the closed trade's `2·tc` plus the new
/// trade's `2·tc`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub bar_index: usize,
    pub timestamp: NaiveDateTime,
    pub closed: Side,
    pub opened: Side,
    pub attributed_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquityPoint {
    pub timestamp: NaiveDateTime,
    /// Exposure during the interval: +1, −1 or 0.
    pub position: i8,
    pub interval_return: f64,
    pub cumulative_value: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EquityCurve {
    pub points: Vec<EquityPoint>,
}

impl EquityCurve {
    fn from_parts(timestamps: &[NaiveDateTime], position: &[i8], returns: &[f64]) -> Self {
        let mut cum = 0.0;
        let points = timestamps
            .iter()
            .zip(position)
            .zip(returns)
            .map(|((&timestamp, &position), &r)| {
                cum += r;
                EquityPoint {
                    timestamp,
                    position,
                    interval_return: r,
                    cumulative_value: cum.exp(),
                }
            })
            .collect();
        EquityCurve { points }
    }

    pub fn returns(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.interval_return).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.cumulative_value).collect()
    }

    pub fn final_value(&self) -> f64 {
        self.points.last().map_or(1.0, |p| p.cumulative_value)
    }

    pub fn total_log_return(&self) -> f64 {
        self.points.iter().map(|p| p.interval_return).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationStatus {
    Traded,
    NoTrades,
}

impl std::fmt::Display for SimulationStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SimulationStatus::Traded => "traded",
            SimulationStatus::NoTrades => "no_trades",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Simulation {
    pub curve: EquityCurve,
    pub trades: Vec<Trade>,
    pub switches: Vec<SwitchEvent>,
    pub status: SimulationStatus,
}

/// Maps per-row signals onto the bar grid; bars without a signal are flat.
pub fn align_signals(bars: &BarSeries, timestamps: &[NaiveDateTime], signals: &[Signal]) -> Result<Vec<Signal>> {
    if timestamps.len() != signals.len() || signals.len() > bars.len() {
        return Err(Error::Alignment {
            message: format!("{} signals for {} timestamps and {} bars", signals.len(), timestamps.len(), bars.len()),
            timestamps: Vec::new(),
        });
    }
    let mut out = vec![Signal::Flat; bars.len()];
    let mut missing = Vec::new();
    for (&ts, &s) in timestamps.iter().zip(signals) {
        match bars.position(ts) {
            Some(i) => out[i] = s,
            None => missing.push(ts),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Alignment {
            message: "signal timestamps not present in the bar series".into(),
            timestamps: missing,
        });
    }
    Ok(out)
}

struct OpenPosition {
    side: Side,
    entry_index: usize,
    entry_px: f64,
    exit_at_open: Option<usize>,
}

/// `signals[i]` is the decision formed at the close of bar `i`.
pub fn simulate(bars: &BarSeries, signals: &[Signal], rule: &SignalRule, tc: f64) -> Result<Simulation> {
    rule.validate()?;
    if signals.len() != bars.len() {
        return Err(Error::Alignment {
            message: format!("{} signals for {} bars", signals.len(), bars.len()),
            timestamps: Vec::new(),
        });
    }
    if !(tc >= 0.0) {
        return Err(Error::Parameter(format!("transaction cost {tc} must be non-negative")));
    }
    let n = bars.len();
    let b = &bars.bars;
    let dur = bars.frequency.duration();
    let last_of_day: Vec<bool> = (0..n)
        .map(|i| i + 1 == n || trading_day(b[i + 1].end) != trading_day(b[i].end))
        .collect();

    let mut returns = vec![0.0; n];
    let mut position = vec![0i8; n];
    let mut trades = Vec::new();
    let mut switches = Vec::new();
    let mut open: Option<OpenPosition> = None;
    let mut pending: Option<Side> = None;

    let close_trade = |p: &OpenPosition, exit_index: usize, exit_ts: NaiveDateTime, exit_px: f64| {
        let gross = p.side.sign() * (exit_px / p.entry_px).ln();
        Trade {
            side: p.side,
            entry_index: p.entry_index,
            entry_ts: b[p.entry_index].end - dur,
            entry_px: p.entry_px,
            exit_index,
            exit_ts,
            exit_px,
            gross,
            cost: 2.0 * tc,
            net: gross - 2.0 * tc,
        }
    };

    for i in 0..n {
        let bar = &b[i];
        let mut r = 0.0;
        let mut exposed = 0i8;
        let mut closed_at_open: Option<Side> = None;

        // Events at the open.
        if let Some(p) = open.as_ref() {
            let switching = pending.is_some_and(|s| s != p.side);
            if p.exit_at_open == Some(i) || switching {
                r += p.side.sign() * (bar.open / b[i - 1].close).ln() - tc;
                exposed = p.side.sign() as i8;
                trades.push(close_trade(p, i, bar.end - dur, bar.open));
                closed_at_open = Some(p.side);
                open = None;
            }
        }
        if let Some(side) = pending.take() {
            if open.is_none() {
                if let Some(prev) = closed_at_open {
                    switches.push(SwitchEvent {
                        bar_index: i,
                        timestamp: bar.end - dur,
                        closed: prev,
                        opened: side,
                        attributed_cost: 4.0 * tc,
                    });
                }
                r -= tc;
                open = Some(OpenPosition {
                    side,
                    entry_index: i,
                    entry_px: bar.open,
                    exit_at_open: match rule.holding {
                        Holding::Fixed(h) => Some(i + h),
                        Holding::UntilOpposite => None,
                    },
                });
                r += side.sign() * (bar.close / bar.open).ln();
            }
        } else if let Some(p) = open.as_ref() {
            r += p.side.sign() * (bar.close / b[i - 1].close).ln();
        }
        if let Some(p) = open.as_ref() {
            exposed = p.side.sign() as i8;
        }

        // Events at the close.
        if last_of_day[i] {
            if let Some(p) = open.take() {
                r -= tc;
                trades.push(close_trade(&p, i, bar.end, bar.close));
            }
        } else {
            let wanted = Side::from_signal(signals[i]);
            pending = match (&open, rule.holding, wanted) {
                (None, _, w) => w,
                (Some(p), Holding::UntilOpposite, Some(w)) if w != p.side => Some(w),
                _ => None,
            };
        }
        returns[i] = r;
        position[i] = exposed;
    }

    let status = if trades.is_empty() {
        SimulationStatus::NoTrades
    } else {
        SimulationStatus::Traded
    };
    Ok(Simulation {
        curve: EquityCurve::from_parts(&bars.timestamps(), &position, &returns),
        trades,
        switches,
        status,
    })
}

/// Long from each day's first open to its last close, flat overnight; one
/// `2·tc` round trip charged over the whole segment.
pub fn benchmark_buy_hold(bars: &BarSeries, tc: f64) -> Result<EquityCurve> {
    let n = bars.len();
    if n < 2 {
        return Err(Error::InsufficientData {
            what: "bars for buy-and-hold",
            needed: 2,
            got: n,
        });
    }
    let b = &bars.bars;
    let returns: Vec<f64> = (0..n)
        .map(|i| {
            let day_start = i == 0 || trading_day(b[i].end) != trading_day(b[i - 1].end);
            let mut r = if day_start {
                (b[i].close / b[i].open).ln()
            } else {
                (b[i].close / b[i - 1].close).ln()
            };
            if i == 0 {
                r -= tc;
            }
            if i + 1 == n {
                r -= tc;
            }
            r
        })
        .collect();
    Ok(EquityCurve::from_parts(&bars.timestamps(), &vec![1; n], &returns))
}

/// i.i.d. signals with `Long/Short/Flat` drawn at the `Up/Down/Neutral` frequencies.
pub fn sample_random_signals(n: usize, dist: &ClassDistribution, seed: u64) -> Result<Vec<Signal>> {
    let total = dist.up + dist.down + dist.neutral;
    if [dist.up, dist.down, dist.neutral].iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("invalid class distribution {dist:?}")));
    }
    let mut rng = task_rng(seed, &[]);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random();
            if u < dist.up {
                Signal::Long
            } else if u < dist.up + dist.down {
                Signal::Short
            } else {
                Signal::Flat
            }
        })
        .collect())
}

pub fn benchmark_random(
    bars: &BarSeries,
    train_distribution: &ClassDistribution,
    rule: &SignalRule,
    tc: f64,
    seed: u64,
) -> Result<Simulation> {
    let signals = sample_random_signals(bars.len(), train_distribution, seed)?;
    simulate(bars, &signals, rule, tc)
}

/// Signals from realized overreactions: the label observed at the close of
/// bar `t` is acted on at the open of `t + 1`, in the same direction unless
/// `contrarian` is set.
pub fn overreaction_signals(
    returns: &ReturnSeries,
    vols: &VolatilitySeries,
    params: &LabelParams,
    bars: &BarSeries,
    contrarian: bool,
) -> Result<Vec<Signal>> {
    let labels = label(returns, vols, params)?;
    let mut signals = vec![Signal::Flat; bars.len()];
    let mut missing = Vec::new();
    for l in &labels {
        let s = Signal::from_state(l.state);
        match bars.position(l.timestamp) {
            Some(i) => signals[i] = if contrarian { s.opposite() } else { s },
            None => missing.push(l.timestamp),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Alignment {
            message: "label timestamps not present in the bar series".into(),
            timestamps: missing,
        });
    }
    Ok(signals)
}

pub fn benchmark_overreaction(
    returns: &ReturnSeries,
    vols: &VolatilitySeries,
    params: &LabelParams,
    rule: &SignalRule,
    bars: &BarSeries,
    tc: f64,
    contrarian: bool,
) -> Result<Simulation> {
    let signals = overreaction_signals(returns, vols, params, bars, contrarian)?;
    simulate(bars, &signals, rule, tc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub rule: SignalRule,
    pub train_sharpe: Option<f64>,
    pub validation_sharpe: Option<f64>,
    pub train_trades: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleChoice {
    pub rule: SignalRule,
    pub train_sharpe: Option<f64>,
    pub validation_sharpe: Option<f64>,
    pub validation_confirmed: bool,
}

/// Highest training Sharpe among candidates with positive validation Sharpe,
/// falling back to the highest training Sharpe overall (flagged unconfirmed).
/// Ties go to the larger threshold, then to the earlier candidate. Candidates
/// with no training trades are never selected.
pub fn select_threshold(candidates: &[RuleOutcome]) -> Result<RuleChoice> {
    let traded: Vec<&RuleOutcome> = candidates.iter().filter(|c| c.train_trades > 0).collect();
    if traded.is_empty() {
        return Err(Error::NoSignal);
    }
    let best = |pool: &[&RuleOutcome]| -> Option<RuleOutcome> {
        let mut best: Option<&RuleOutcome> = None;
        for &c in pool {
            let s = c.train_sharpe.unwrap_or(f64::NEG_INFINITY);
            best = match best {
                None => Some(c),
                Some(b) => {
                    let bs = b.train_sharpe.unwrap_or(f64::NEG_INFINITY);
                    if s > bs || (s == bs && c.rule.threshold > b.rule.threshold) {
                        Some(c)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best.cloned()
    };
    let confirmed: Vec<&RuleOutcome> = traded
        .iter()
        .copied()
        .filter(|c| c.validation_sharpe.is_some_and(|v| v > 0.0))
        .collect();
    let (chosen, validation_confirmed) = match best(&confirmed) {
        Some(c) => (c, true),
        None => (best(&traded).unwrap(), false),
    };
    Ok(RuleChoice {
        rule: chosen.rule,
        train_sharpe: chosen.train_sharpe,
        validation_sharpe: chosen.validation_sharpe,
        validation_confirmed,
    })
}

pub fn write_equity_csv<W: Write>(writer: W, curve: &EquityCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp", "position", "interval_return", "cumulative_value"])?;
    for p in &curve.points {
        w.write_record([
            format_timestamp(p.timestamp),
            p.position.to_string(),
            p.interval_return.to_string(),
            p.cumulative_value.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trades_csv<W: Write>(writer: W, trades: &[Trade]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["side", "entry_ts", "entry_px", "exit_ts", "exit_px", "gross", "cost", "net"])?;
    for t in trades {
        w.write_record([
            t.side.name().to_string(),
            format_timestamp(t.entry_ts),
            t.entry_px.to_string(),
            format_timestamp(t.exit_ts),
            t.exit_px.to_string(),
            t.gross.to_string(),
            t.cost.to_string(),
            t.net.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

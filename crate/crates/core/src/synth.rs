//! Seeded synthetic bar and tweet-emotion corpora with planted fear events.
//!
//! Each day is generated from its own random streams, so days are
//! independent of generation order. Within a day log-volatility follows an
//! AR(1) recursion. A fear event at interval `e` lifts tweet fear scores for
//! `e .. e + duration` and, depending on the planted mode, moves the price by
//! a shock at `e` followed by a drift over `e + 1 ..= e + duration`.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDate, NaiveDateTime, NaiveTime, Weekday};
use chrono::Datelike;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::emotion_features::{write_tweets_csv, TweetEmotion};
use crate::error::{Error, Result};
use crate::market_data::{write_bars_csv, Bar, BarSeries, Frequency, SessionWindow};
use crate::rng::{task_rng, TaskRng};

/// Baseline tweet emotion levels in `EMOTIONS` order
/// (anger, disgust, fear, joy, neutral, sadness, surprise).
pub const BASELINE_EMOTIONS: [f64; 7] = [0.05, 0.01, 0.15, 0.08, 0.55, 0.05, 0.11];
const FEAR: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantedEffect {
    None,
    MomentumAfterFear,
    MeanRevertAfterFear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub days: usize,
    pub start_date: NaiveDate,
    pub frequency: Frequency,
    pub session_start: NaiveTime,
    pub session_end: NaiveTime,
    /// Per-interval return volatility before clustering.
    pub base_volatility: f64,
    /// AR(1) coefficient of log-volatility.
    pub persistence: f64,
    /// Stationary standard deviation of log-volatility.
    pub vol_of_vol: f64,
    /// Expected fear events per day.
    pub fear_spike_rate: f64,
    /// Added to the baseline fear level of tweets during an event.
    pub fear_spike_magnitude: f64,
    pub effect: PlantedEffect,
    /// Drift per interval after an event; the onset shock is half of it.
    pub effect_strength: f64,
    pub effect_duration: usize,
    /// Minimum number of intervals between two event onsets.
    pub min_event_gap: usize,
    pub tweets_per_interval: f64,
    pub base_volume: f64,
    pub initial_price: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 7,
            days: 20,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 2).unwrap(),
            frequency: Frequency::FIVE_MINUTES,
            session_start: NaiveTime::from_hms_opt(4, 0, 0).unwrap(),
            session_end: NaiveTime::from_hms_opt(20, 0, 0).unwrap(),
            base_volatility: 0.001,
            persistence: 0.9,
            vol_of_vol: 0.25,
            fear_spike_rate: 16.0,
            fear_spike_magnitude: 0.5,
            effect: PlantedEffect::MomentumAfterFear,
            effect_strength: 0.03,
            effect_duration: 3,
            min_event_gap: 10,
            tweets_per_interval: 4.0,
            base_volume: 10_000.0,
            initial_price: 100.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("scenario: {m}")));
        if !(0.0..1.0).contains(&self.persistence) {
            return bad("persistence must lie in [0, 1)");
        }
        if self.days == 0 {
            return bad("days must be positive");
        }
        if !(self.base_volatility > 0.0) || !(self.vol_of_vol >= 0.0) {
            return bad("volatilities must be positive");
        }
        if !(self.fear_spike_rate >= 0.0) || !(self.tweets_per_interval >= 0.0) || !(self.fear_spike_magnitude >= 0.0) {
            return bad("rates and magnitudes must be non-negative");
        }
        if !(self.effect_strength >= 0.0) || self.effect_duration == 0 {
            return bad("effect strength must be non-negative and duration positive");
        }
        if self.min_event_gap <= self.effect_duration {
            return bad("min_event_gap must exceed effect_duration");
        }
        if !(self.initial_price > 0.0) || !(self.base_volume > 0.0) {
            return bad("initial price and base volume must be positive");
        }
        SessionWindow::new(self.session_start, self.session_end)?;
        Ok(())
    }

    pub fn session(&self) -> SessionWindow {
        SessionWindow {
            start: self.session_start,
            end: self.session_end,
        }
    }

    pub fn bars_per_day(&self) -> usize {
        let secs = (self.session_end - self.session_start).num_seconds();
        (secs / self.frequency.duration().num_seconds()) as usize
    }

    pub fn trading_days(&self) -> Vec<NaiveDate> {
        self.start_date
            .iter_days()
            .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
            .take(self.days)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantEvent {
    pub timestamp: NaiveDateTime,
    pub bar_index: usize,
    /// Direction of the onset shock.
    pub shock_sign: i8,
    /// Direction of the planted drift (0 without a price effect).
    pub drift_sign: i8,
    pub duration: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantLog {
    pub effect: PlantedEffect,
    pub strength: f64,
    pub events: Vec<PlantEvent>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub bars: BarSeries,
    pub tweets: Vec<TweetEmotion>,
    pub plant: PlantLog,
}

struct Day {
    log_returns: Vec<f64>,
    highs: Vec<f64>,
    lows: Vec<f64>,
    volumes: Vec<f64>,
    overnight: f64,
    events: Vec<(usize, i8)>,
}

fn normal(rng: &mut TaskRng) -> f64 {
    StandardNormal.sample(rng)
}

fn simulate_day(cfg: &ScenarioConfig, day: u64) -> Day {
    let n = cfg.bars_per_day();
    let mut rng = task_rng(cfg.seed, &[day, 0]);
    let dur = cfg.effect_duration;

    // Event onsets leave room for the whole drift inside the day.
    let eligible = n.saturating_sub(dur + 1).max(1);
    let expected_gap = eligible as f64 / cfg.fear_spike_rate.max(1e-12);
    let p = if cfg.fear_spike_rate > 0.0 {
        (1.0 / (expected_gap - cfg.min_event_gap as f64 + 1.0).max(1.0)).min(1.0)
    } else {
        0.0
    };
    let mut events = Vec::new();
    let mut next_allowed = 1;
    for e in 1..n.saturating_sub(dur) {
        if e >= next_allowed && rng.random::<f64>() < p {
            let sign = if rng.random::<bool>() { 1 } else { -1 };
            events.push((e, sign));
            next_allowed = e + cfg.min_event_gap;
        }
    }

    let mut shock = vec![0.0; n];
    let mut drift = vec![0.0; n];
    let drift_dir = match cfg.effect {
        PlantedEffect::None => 0.0,
        PlantedEffect::MomentumAfterFear => 1.0,
        PlantedEffect::MeanRevertAfterFear => -1.0,
    };
    for &(e, sign) in &events {
        if drift_dir != 0.0 {
            shock[e] = sign as f64 * 0.5 * cfg.effect_strength;
            for d in drift.iter_mut().skip(e + 1).take(dur) {
                *d = drift_dir * sign as f64 * cfg.effect_strength;
            }
        }
    }

    let innovation = cfg.vol_of_vol * (1.0 - cfg.persistence * cfg.persistence).sqrt();
    let mut h = cfg.vol_of_vol * normal(&mut rng);
    let mut log_returns = Vec::with_capacity(n);
    let mut highs = Vec::with_capacity(n);
    let mut lows = Vec::with_capacity(n);
    let mut volumes = Vec::with_capacity(n);
    for i in 0..n {
        h = cfg.persistence * h + innovation * normal(&mut rng);
        let sigma = cfg.base_volatility * (h - 0.5 * cfg.vol_of_vol * cfg.vol_of_vol).exp();
        log_returns.push(sigma * normal(&mut rng) + shock[i] + drift[i]);
        highs.push(0.5 * sigma * normal(&mut rng).abs());
        lows.push(0.5 * sigma * normal(&mut rng).abs());
        volumes.push((cfg.base_volume * (0.3 * normal(&mut rng)).exp()).round().max(1.0));
    }
    let overnight = 5.0 * cfg.base_volatility * normal(&mut rng);
    Day {
        log_returns,
        highs,
        lows,
        volumes,
        overnight,
        events,
    }
}

fn simulate_tweets(cfg: &ScenarioConfig, day: u64, grid: &[NaiveDateTime], events: &[(usize, i8)]) -> Vec<TweetEmotion> {
    let mut rng = task_rng(cfg.seed, &[day, 1]);
    let mut fearful = vec![false; grid.len()];
    for &(e, _) in events {
        for f in fearful.iter_mut().skip(e).take(cfg.effect_duration) {
            *f = true;
        }
    }
    let width = cfg.frequency.duration().num_seconds();
    let poisson = (cfg.tweets_per_interval > 0.0).then(|| Poisson::new(cfg.tweets_per_interval).unwrap());
    let mut out = Vec::new();
    for (i, &end) in grid.iter().enumerate() {
        let count = poisson.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        let mut offsets: Vec<i64> = (0..count).map(|_| rng.random_range(0..width)).collect();
        offsets.sort_unstable();
        for off in offsets {
            let mut raw = BASELINE_EMOTIONS;
            if fearful[i] {
                raw[FEAR] += cfg.fear_spike_magnitude;
            }
            for v in raw.iter_mut() {
                *v *= (0.5 * normal(&mut rng)).exp();
            }
            let total: f64 = raw.iter().sum();
            let mut scores = raw.map(|v| (v / total).clamp(0.0, 1.0));
            scores.iter_mut().for_each(|s| *s = (*s * 1e6).round() / 1e6);
            out.push(TweetEmotion {
                timestamp: end - Duration::seconds(off),
                scores,
            });
        }
    }
    out
}

pub fn generate(cfg: &ScenarioConfig) -> Result<Corpus> {
    cfg.validate()?;
    let step = cfg.frequency.duration();
    let n = cfg.bars_per_day();
    let mut bars = Vec::with_capacity(cfg.days * n);
    let mut tweets = Vec::new();
    let mut events = Vec::new();
    let mut price = cfg.initial_price;
    for (d, date) in cfg.trading_days().into_iter().enumerate() {
        let day = simulate_day(cfg, d as u64);
        let open_time = date.and_time(cfg.session_start);
        let grid: Vec<NaiveDateTime> = (1..=n).map(|k| open_time + step * k as i32).collect();
        if d > 0 {
            price *= day.overnight.exp();
        }
        let first = bars.len();
        for i in 0..n {
            let open = price;
            let close = open * day.log_returns[i].exp();
            bars.push(Bar {
                end: grid[i],
                open,
                high: open.max(close) * day.highs[i].exp(),
                low: open.min(close) * (-day.lows[i]).exp(),
                close,
                volume: day.volumes[i],
            });
            price = close;
        }
        let drift_dir: i8 = match cfg.effect {
            PlantedEffect::None => 0,
            PlantedEffect::MomentumAfterFear => 1,
            PlantedEffect::MeanRevertAfterFear => -1,
        };
        for &(e, sign) in &day.events {
            events.push(PlantEvent {
                timestamp: grid[e],
                bar_index: first + e,
                shock_sign: sign,
                drift_sign: drift_dir * sign,
                duration: cfg.effect_duration,
            });
        }
        tweets.extend(simulate_tweets(cfg, d as u64, &grid, &day.events));
    }
    let mut series = BarSeries::new(bars, cfg.frequency);
    series.session = Some(cfg.session());
    Ok(Corpus {
        bars: series,
        tweets,
        plant: PlantLog {
            effect: cfg.effect,
            strength: cfg.effect_strength,
            events,
        },
    })
}

pub fn write_plant_json<W: Write>(writer: W, plant: &PlantLog) -> Result<()> {
    serde_json::to_writer_pretty(writer, plant)?;
    Ok(())
}

/// Writes `bars.csv`, `tweets.csv` and `plant.json` into `dir`.
pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_bars_csv(fs::File::create(dir.join("bars.csv"))?, &corpus.bars)?;
    write_tweets_csv(fs::File::create(dir.join("tweets.csv"))?, &corpus.tweets)?;
    write_plant_json(fs::File::create(dir.join("plant.json"))?, &corpus.plant)?;
    Ok(())
}

//! Reference implementations, data generators and randomized checks shared
//! by the integration tests. The oracles never call the code they check.

#![allow(dead_code)]

use chrono::{Duration, NaiveDate, NaiveDateTime};
use overreaction::labeling::Overreaction;
use overreaction::market_data::{Bar, BarSeries, Frequency, ReturnSeries};
use overreaction::rng::task_rng;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn ts(s: &str) -> NaiveDateTime {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").unwrap()
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Returns with regime-switching scale and a new day roughly every 80 points.
pub fn random_returns(seed: u64, n: usize) -> (Vec<f64>, Vec<bool>) {
    let mut rng = task_rng(seed, &[]);
    let mut scale = 0.001;
    let mut values = Vec::with_capacity(n);
    let mut day_starts = Vec::with_capacity(n);
    for i in 0..n {
        if rng.random::<f64>() < 0.02 {
            scale = rng.random_range(0.0002..0.005);
        }
        let jump = if rng.random::<f64>() < 0.03 { 8.0 } else { 1.0 };
        values.push(scale * jump * normal(&mut rng));
        day_starts.push(i == 0 || rng.random::<f64>() < 1.0 / 80.0);
    }
    (values, day_starts)
}

pub fn return_series(values: &[f64], day_starts: &[bool]) -> ReturnSeries {
    ReturnSeries::from_values(ts("2024-01-02T09:35:00"), Duration::minutes(5), values, day_starts)
}

/// `sqrt(mean(r_j^2))` over `r[k-window..k]`, summed left to right.
pub fn naive_rms(r: &[f64], k: usize, window: usize) -> f64 {
    let mut ss = 0.0;
    for j in k - window..k {
        ss += r[j] * r[j];
    }
    (ss / window as f64).sqrt()
}

/// `(timestamp index, state)` for every labelable index: return `k+1`
/// against `theta * sigma_k + 2 tc` with strict inequalities, skipping
/// pairs where `k+1` opens a new day.
pub fn label_oracle(r: &[f64], day_starts: &[bool], window: usize, theta: f64, tc: f64) -> Vec<(usize, Overreaction)> {
    let mut out = Vec::new();
    for k in window..r.len().saturating_sub(1) {
        if day_starts[k + 1] {
            continue;
        }
        let barrier = theta * naive_rms(r, k, window) + 2.0 * tc;
        let state = if r[k + 1] > barrier {
            Overreaction::Up
        } else if r[k + 1] < -barrier {
            Overreaction::Down
        } else {
            Overreaction::Neutral
        };
        out.push((k + 1, state));
    }
    out
}

pub fn two_pass_mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mut s = 0.0;
    for v in x {
        s += v;
    }
    let m = s / n;
    let mut ss = 0.0;
    for v in x {
        ss += (v - m) * (v - m);
    }
    (m, (ss / n).sqrt())
}

pub fn sharpe_oracle(r: &[f64], a: f64) -> f64 {
    let (m, sd) = two_pass_mean_std(r);
    m / sd * a.sqrt()
}

pub fn sortino_oracle(r: &[f64], a: f64) -> f64 {
    let (m, _) = two_pass_mean_std(r);
    let mut dd = 0.0;
    for v in r {
        if *v < 0.0 {
            dd += v * v;
        }
    }
    m / (dd / r.len() as f64).sqrt() * a.sqrt()
}

pub fn mdd_oracle(values: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for j in 0..values.len() {
        for i in 0..=j {
            worst = worst.max(1.0 - values[j] / values[i]);
        }
    }
    worst
}

pub fn moments_oracle(r: &[f64]) -> (f64, f64) {
    let (m, sd) = two_pass_mean_std(r);
    let n = r.len() as f64;
    let (mut m3, mut m4) = (0.0, 0.0);
    for v in r {
        let d = v - m;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    (m3 / n / sd.powi(3), m4 / n / sd.powi(4))
}

/// The Sharpe-difference statistic written out on scalars.
pub fn jk_transcription(r1: &[f64], r2: &[f64]) -> f64 {
    let (m1, s1) = two_pass_mean_std(r1);
    let (m2, s2) = two_pass_mean_std(r2);
    let n = r1.len() as f64;
    let mut cov = 0.0;
    for i in 0..r1.len() {
        cov += (r1[i] - m1) * (r2[i] - m2);
    }
    let rho = cov / n / (s1 * s2);
    let sr1 = m1 / s1;
    let sr2 = m2 / s2;
    let theta = (2.0 + 0.5 * (sr1 * sr1 + sr2 * sr2 - 2.0 * rho * sr1 * sr2)) / n;
    (sr1 - sr2) / theta.sqrt()
}

/// One trading day of bars ending every `minutes` from `start`, with
/// open = previous close.
pub fn day_bars(date: NaiveDate, start: &str, minutes: u32, closes: &[f64], first_open: f64) -> Vec<Bar> {
    let t0 = NaiveDateTime::new(date, chrono::NaiveTime::parse_from_str(start, "%H:%M").unwrap());
    let mut open = first_open;
    closes
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let b = Bar {
                end: t0 + Duration::minutes(minutes as i64 * (i as i64 + 1)),
                open,
                high: open.max(c),
                low: open.min(c),
                close: c,
                volume: 1000.0,
            };
            open = c;
            b
        })
        .collect()
}

pub fn series(bars: Vec<Bar>, minutes: u32) -> BarSeries {
    BarSeries::new(bars, Frequency::new(minutes).unwrap())
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub mod lookahead {
    use overreaction::backtest::{align_signals, generate_signals, overreaction_signals, simulate, Holding, Signal, SignalRule, Trade};
    use overreaction::emotion_features::{FeatureScaler, IntervalRecord, TweetEmotion};
    use overreaction::experiment::{prepare_frequency, ExperimentConfig, Inputs};
    use overreaction::labeling::{label, LabelParams, OverreactionLabel};
    use overreaction::market_data::BarSeries;
    use overreaction::modeling::TrainedModel;
    use overreaction::rng::task_rng;
    use rand::Rng;

    pub struct Snapshot {
        pub records: Vec<IntervalRecord>,
        pub labels: Vec<OverreactionLabel>,
        pub signals: Vec<Signal>,
        pub over_signals: Vec<Signal>,
        pub trades: Vec<Vec<Trade>>,
    }

    pub fn snapshot(bars: &BarSeries, tweets: &[TweetEmotion], model: &TrainedModel, scaler: &FeatureScaler) -> Snapshot {
        let cfg = ExperimentConfig::default();
        let inputs = Inputs {
            bars: bars.clone(),
            tweets: tweets.to_vec(),
            clean: None,
            plant: None,
        };
        let fd = prepare_frequency(&inputs, bars.frequency, &cfg).unwrap();
        let params = LabelParams::new(1.5, cfg.tc, cfg.window).unwrap();
        let labels = label(&fd.returns, &fd.vols, &params).unwrap();
        let x = scaler.transform(&fd.records).unwrap();
        let probs = model.predict_proba(&x).unwrap();
        let stamps: Vec<_> = fd.records.iter().map(|r| r.timestamp).collect();
        let signals = align_signals(&fd.bars, &stamps, &generate_signals(&probs, 0.4)).unwrap();
        let over_signals = overreaction_signals(&fd.returns, &fd.vols, &params, &fd.bars, false).unwrap();
        let mut trades = Vec::new();
        for holding in [Holding::Fixed(1), Holding::Fixed(5), Holding::UntilOpposite] {
            let rule = SignalRule::new(0.4, holding).unwrap();
            trades.push(simulate(&fd.bars, &signals, &rule, cfg.tc).unwrap().trades);
            trades.push(simulate(&fd.bars, &over_signals, &rule, cfg.tc).unwrap().trades);
        }
        Snapshot {
            records: fd.records,
            labels,
            signals,
            over_signals,
            trades,
        }
    }

    /// Perturbs every bar after index `t` and every tweet after its close.
    pub fn mutate_after(bars: &BarSeries, tweets: &[TweetEmotion], t: usize, seed: u64) -> (BarSeries, Vec<TweetEmotion>) {
        let mut rng = task_rng(seed, &[1]);
        let mut out = bars.clone();
        for b in out.bars.iter_mut().skip(t + 1) {
            let f = (rng.random_range(-0.05..0.05f64)).exp();
            b.open *= f;
            b.high *= f;
            b.low *= f;
            b.close *= f;
            b.volume *= rng.random_range(0.1..10.0);
        }
        let cutoff = bars.bars[t].end;
        let mut tw: Vec<TweetEmotion> = Vec::new();
        for tweet in tweets {
            if tweet.timestamp <= cutoff {
                tw.push(*tweet);
                continue;
            }
            match rng.random_range(0..3) {
                0 => {}
                1 => tw.push(*tweet),
                _ => {
                    let mut m = *tweet;
                    for s in m.scores.iter_mut() {
                        *s = rng.random();
                    }
                    tw.push(m);
                    tw.push(m);
                }
            }
        }
        (out, tw)
    }

    /// Number of quantities at or before bar `t` that differ between the two snapshots.
    pub fn violations(a: &Snapshot, b: &Snapshot, bars: &BarSeries, t: usize) -> usize {
        let cutoff = bars.bars[t].end;
        let mut v = 0;
        let early_records = |s: &Snapshot| s.records.iter().filter(|r| r.timestamp <= cutoff).copied().collect::<Vec<_>>();
        v += (early_records(a) != early_records(b)) as usize;
        let early_labels = |s: &Snapshot| s.labels.iter().filter(|l| l.timestamp <= cutoff).copied().collect::<Vec<_>>();
        v += (early_labels(a) != early_labels(b)) as usize;
        v += (a.signals[..=t] != b.signals[..=t]) as usize;
        v += (a.over_signals[..=t] != b.over_signals[..=t]) as usize;
        for (ta, tb) in a.trades.iter().zip(&b.trades) {
            let entries = |ts: &[Trade]| {
                ts.iter()
                    .filter(|x| x.entry_index <= t)
                    .map(|x| (x.side, x.entry_index, x.entry_px.to_bits()))
                    .collect::<Vec<_>>()
            };
            v += (entries(ta) != entries(tb)) as usize;
        }
        v
    }
}

pub mod lookahead_setup {
    use overreaction::emotion_features::{fit_scaler, FeatureScaler};
    use overreaction::experiment::{build_dataset, prepare_frequency, ExperimentConfig, Inputs};
    use overreaction::modeling::{class_weights, train, ClassifierSpec, Family, TrainedModel};
    use overreaction::labeling::class_distribution;
    use overreaction::synth::{generate, Corpus, ScenarioConfig};

    /// A three-day corpus with a logistic model and scaler fitted on all of it.
    pub fn fixture() -> (Corpus, TrainedModel, FeatureScaler) {
        let corpus = generate(&ScenarioConfig {
            days: 3,
            seed: 11,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let cfg = ExperimentConfig::default();
        let inputs = Inputs {
            bars: corpus.bars.clone(),
            tweets: corpus.tweets.clone(),
            clean: None,
            plant: None,
        };
        let fd = prepare_frequency(&inputs, corpus.bars.frequency, &cfg).unwrap();
        let ds = build_dataset(&fd, 1.5, &cfg).unwrap();
        let scaler = fit_scaler(&ds.records).unwrap();
        let x = scaler.transform(&ds.records).unwrap();
        let weights = class_weights(&class_distribution(&ds.labels).unwrap());
        let model = train(&ClassifierSpec::default_for(Family::MultinomialLogistic, 0), &x, &ds.labels, &weights).unwrap();
        (corpus, model, scaler)
    }
}

pub mod models {
    use overreaction::emotion_features::FeatureMatrix;
    use overreaction::labeling::Overreaction;
    use overreaction::modeling::{
        class_weights, train, ClassifierSpec, Family, ForestParams, GbtParams, Hyperparams, MlpParams, TrainedModel,
    };
    use overreaction::labeling::class_distribution;
    use overreaction::rng::task_rng;
    use rand::Rng;

    /// Uniform features in [-1, 1) and labels from a noisy nonlinear score.
    pub fn dataset(n: usize, d: usize, seed: u64) -> (FeatureMatrix, Vec<Overreaction>) {
        let mut rng = task_rng(seed, &[]);
        let mut data = Vec::with_capacity(n * d);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let row: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s = row[0] + 0.8 * row[1] * row[2] - 0.5 * row[d - 1] + 0.3 * rng.random_range(-1.0..1.0);
            y.push(if s > 0.4 {
                Overreaction::Up
            } else if s < -0.4 {
                Overreaction::Down
            } else {
                Overreaction::Neutral
            });
            data.extend(row);
        }
        (FeatureMatrix::anonymous(d, data).unwrap(), y)
    }

    /// One fitted model per family with small budgets.
    pub fn every_family(x: &FeatureMatrix, y: &[Overreaction], seed: u64) -> Vec<TrainedModel> {
        let weights = class_weights(&class_distribution(y).unwrap());
        Family::ALL
            .iter()
            .map(|&f| {
                let hp = match f {
                    Family::RandomForest => Hyperparams::Forest(ForestParams {
                        n_estimators: 30,
                        ..ForestParams::default()
                    }),
                    Family::GradientBoostedTrees => Hyperparams::Gbt(GbtParams {
                        n_estimators: 40,
                        max_depth: 4,
                        ..GbtParams::default()
                    }),
                    Family::FeedForwardNet => Hyperparams::Mlp(MlpParams {
                        hidden: vec![16, 8],
                        max_epochs: 30,
                        ..MlpParams::default()
                    }),
                    other => other.default_hyperparams(),
                };
                train(&ClassifierSpec::new(hp, seed), x, y, &weights).unwrap()
            })
            .collect()
    }
}

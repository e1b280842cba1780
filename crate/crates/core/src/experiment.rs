//! End-to-end experiment: label, train, select, backtest, explain and report.
//!
//! The grid is walked in (frequency, θ, model) order. Every cell owns a seed
//! derived from the master seed and its key, reads its test segment exactly
//! once, and produces a self-contained [`CellReport`].

use std::cell::Cell;
use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::{
    align_on_timestamps, annualization_factor, jobson_korkie, perf_report, sharpe, shap_summary,
    shapley::class_output, write_jk_csv, write_shap_csv, JkRow, JkWinner, PerfReport, ShapSummary,
};
use crate::backtest::{
    align_signals, benchmark_buy_hold, generate_signals, holding_grid, sample_random_signals, select_threshold,
    simulate, threshold_grid, write_equity_csv, write_trades_csv, EquityCurve, Holding, RuleChoice, RuleOutcome,
    Signal, SignalRule, Simulation, SimulationStatus, Trade,
};
use crate::emotion_features::{
    aggregate_emotions, assemble_features, fit_scaler, read_tweets_csv, FeatureMatrix, FeatureScaler,
    IntervalRecord, TweetEmotion,
};
use crate::error::{Error, Result};
use crate::labeling::{
    class_distribution, label, rolling_volatility, ClassDistribution, LabelParams, Overreaction, DEFAULT_TC,
    DEFAULT_WINDOW,
};
use crate::market_data::{
    bucket_end, filter_session, log_returns, read_bars_csv, resample, BarSeries, CleanReport, Frequency,
    ReturnSeries, SessionWindow,
};
use crate::modeling::search::{write_cv_csv, DEFAULT_N_ITER};
use crate::modeling::{
    chronological_split, class_weights, classification_report, expanding_cv_folds, predicted_class,
    randomized_search, train, ClassProbabilities, ClassificationReport, ClassifierSpec, DatasetSplit, Family,
    ScoreMetric, SearchResult, SplitSpec, TrainedModel,
};
use crate::rng::{derive_seed, str_key, task_rng};
use crate::synth::{self, PlantLog, ScenarioConfig};

pub const MODEL_STRATEGY: &str = "model";
pub const BUY_HOLD: &str = "buy-and-hold";
pub const RANDOM: &str = "random";
pub const OVERREACTION: &str = "overreaction";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSource {
    pub bars: PathBuf,
    pub tweets: PathBuf,
    /// Bar size of the input file.
    pub frequency: Frequency,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub frequencies: Vec<Frequency>,
    pub thetas: Vec<f64>,
    pub tc: f64,
    pub window: usize,
    pub models: Vec<Family>,
    pub search_iterations: usize,
    pub cv_folds: usize,
    pub cv_metric: ScoreMetric,
    pub thresholds: Vec<f64>,
    pub holdings: Vec<Holding>,
    /// Repeat the previous interval's emotions when an interval has no tweets.
    pub forward_fill: bool,
    /// Trade against realized overreactions in the overreaction benchmark.
    pub contrarian: bool,
    pub shap_background: usize,
    /// Test rows explained per cell; 0 disables attribution.
    pub shap_rows: usize,
    pub session: Option<SessionWindow>,
    pub split: SplitSpec,
    pub data: Option<DataSource>,
    pub synth: Option<ScenarioConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            frequencies: vec![Frequency::FIVE_MINUTES],
            thetas: vec![2.0],
            tc: DEFAULT_TC,
            window: DEFAULT_WINDOW,
            models: vec![Family::GradientBoostedTrees],
            search_iterations: DEFAULT_N_ITER,
            cv_folds: 3,
            cv_metric: ScoreMetric::MacroF1,
            thresholds: threshold_grid(),
            holdings: holding_grid(),
            forward_fill: false,
            contrarian: false,
            shap_background: 50,
            shap_rows: 25,
            session: None,
            split: SplitSpec::default(),
            data: None,
            synth: None,
        }
    }
}

fn has_duplicates<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(i, a)| v[..i].contains(a))
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a TOML config; relative data paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(d) = cfg.data.as_mut() {
            for p in [&mut d.bars, &mut d.tweets] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let source = match (&self.data, &self.synth) {
            (Some(d), None) => d.frequency,
            (None, Some(s)) => {
                s.validate()?;
                s.frequency
            }
            _ => return bad("exactly one of [data] and [synth] must be given".into()),
        };
        if self.frequencies.is_empty() || has_duplicates(&self.frequencies) {
            return bad("frequencies must be a non-empty list without duplicates".into());
        }
        for f in &self.frequencies {
            if f.minutes() % source.minutes() != 0 {
                return bad(format!("frequency {} is not a multiple of the input bars ({})", f.label(), source.label()));
            }
        }
        if self.thetas.is_empty() || has_duplicates(&self.thetas) {
            return bad("thetas must be a non-empty list without duplicates".into());
        }
        LabelParams::new(1.0, self.tc, self.window).map_err(|e| Error::Config(e.to_string()))?;
        for &theta in &self.thetas {
            if !(theta > 0.0 && theta.is_finite()) {
                return bad(format!("theta {theta} must be positive"));
            }
        }
        if self.models.is_empty() || has_duplicates(&self.models) {
            return bad("models must be a non-empty list without duplicates".into());
        }
        if self.search_iterations == 0 || self.cv_folds == 0 {
            return bad("search_iterations and cv_folds must be positive".into());
        }
        if self.thresholds.is_empty() || self.holdings.is_empty() {
            return bad("thresholds and holdings must be non-empty".into());
        }
        for &c in &self.thresholds {
            for &h in &self.holdings {
                SignalRule::new(c, h).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        if self.shap_rows > 0 && self.shap_background == 0 {
            return bad("shap_background must be positive when shap_rows is".into());
        }
        self.split.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(d) = &self.data {
            for p in [&d.bars, &d.tweets] {
                if !p.is_file() {
                    return bad(format!("input file {} does not exist", p.display()));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn session_window(&self) -> SessionWindow {
        match (&self.session, &self.synth) {
            (Some(s), _) => *s,
            (None, Some(s)) => s.session(),
            (None, None) => SessionWindow::extended_hours(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub frequency: Frequency,
    pub theta: f64,
    pub model: Family,
}

impl CellKey {
    pub fn label(&self) -> String {
        format!("{}_theta-{}_{}", self.frequency.label(), self.theta, self.model.name())
    }

    pub fn seed(&self, master: u64) -> u64 {
        derive_seed(
            master,
            &[self.frequency.minutes() as u64, self.theta.to_bits(), str_key(self.model.name())],
        )
    }
}

/// Hands out the wrapped value and counts every read.
pub struct TestSegment<T> {
    data: T,
    reads: Cell<usize>,
}

impl<T> TestSegment<T> {
    pub fn new(data: T) -> Self {
        TestSegment { data, reads: Cell::new(0) }
    }

    pub fn read(&self) -> &T {
        self.reads.set(self.reads.get() + 1);
        &self.data
    }

    pub fn reads(&self) -> usize {
        self.reads.get()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub name: String,
    pub rule: Option<SignalRule>,
    pub status: SimulationStatus,
    pub validation_sharpe: Option<f64>,
    pub perf: PerfReport,
    pub curve: EquityCurve,
    pub trades: Vec<Trade>,
}

impl StrategyReport {
    fn new(name: &str, rule: Option<SignalRule>, validation_sharpe: Option<f64>, sim: Simulation, a: f64) -> Result<Self> {
        Ok(StrategyReport {
            name: name.to_string(),
            rule,
            status: sim.status,
            validation_sharpe,
            perf: perf_report(&sim.curve, sim.trades.len(), a)?,
            curve: sim.curve,
            trades: sim.trades,
        })
    }

    fn timed_returns(&self) -> Vec<(NaiveDateTime, f64)> {
        self.curve.points.iter().map(|p| (p.timestamp, p.interval_return)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub key: CellKey,
    pub seed: u64,
    pub n_rows: usize,
    pub split: DatasetSplit,
    pub train_distribution: ClassDistribution,
    pub search: SearchResult,
    pub model: TrainedModel,
    pub test_classification: ClassificationReport,
    pub prior_test_accuracy: f64,
    /// `None` when no candidate rule traded on the training segment.
    pub selection: Option<RuleChoice>,
    /// Model strategy first, then buy-and-hold, random and overreaction.
    pub strategies: Vec<StrategyReport>,
    pub shap: Vec<ShapSummary>,
    pub test_reads: usize,
}

impl CellReport {
    pub fn strategy(&self, name: &str) -> Option<&StrategyReport> {
        self.strategies.iter().find(|s| s.name == name)
    }

    pub fn summary(&self) -> CellSummary {
        CellSummary {
            key: self.key,
            seed: self.seed,
            n_rows: self.n_rows,
            split: self.split.clone(),
            train_distribution: self.train_distribution,
            best_spec: self.search.best.clone(),
            cv_mean_scores: self.search.mean_scores.clone(),
            degenerate_folds: self.search.degenerate_folds.clone(),
            test_classification: self.test_classification.clone(),
            prior_test_accuracy: self.prior_test_accuracy,
            selection: self.selection.clone(),
            strategies: self
                .strategies
                .iter()
                .map(|s| StrategySummary {
                    name: s.name.clone(),
                    rule: s.rule,
                    status: s.status,
                    validation_sharpe: s.validation_sharpe,
                    perf: s.perf.clone(),
                })
                .collect(),
            shap_ranking: self
                .shap
                .iter()
                .map(|s| (s.class, s.ranked_names().into_iter().map(String::from).collect()))
                .collect(),
            test_reads: self.test_reads,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub name: String,
    pub rule: Option<SignalRule>,
    pub status: SimulationStatus,
    pub validation_sharpe: Option<f64>,
    pub perf: PerfReport,
}

/// The JSON view of a cell written next to its CSV files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub key: CellKey,
    pub seed: u64,
    pub n_rows: usize,
    pub split: DatasetSplit,
    pub train_distribution: ClassDistribution,
    pub best_spec: ClassifierSpec,
    pub cv_mean_scores: Vec<f64>,
    pub degenerate_folds: Vec<(usize, usize)>,
    pub test_classification: ClassificationReport,
    pub prior_test_accuracy: f64,
    pub selection: Option<RuleChoice>,
    pub strategies: Vec<StrategySummary>,
    pub shap_ranking: Vec<(Overreaction, Vec<String>)>,
    pub test_reads: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub bars: usize,
    pub tweets: usize,
    pub clean: Option<CleanReport>,
    pub plant_events: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCell {
    pub key: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub data: DataSummary,
    /// Annualization factor per frequency in minutes.
    pub annualization: BTreeMap<u32, f64>,
    pub cells: Vec<ManifestCell>,
    pub notes: Vec<String>,
}

impl Manifest {
    pub fn new(config: &ExperimentConfig) -> Self {
        Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            master_seed: config.seed,
            config: config.clone(),
            data: DataSummary::default(),
            annualization: BTreeMap::new(),
            cells: Vec::new(),
            notes: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub manifest: Manifest,
    pub cells: Vec<CellReport>,
    pub comparisons: Vec<JkRow>,
}

impl ExperimentReport {
    pub fn empty(config: &ExperimentConfig) -> Self {
        ExperimentReport {
            manifest: Manifest::new(config),
            cells: Vec::new(),
            comparisons: Vec::new(),
        }
    }

    pub fn cell(&self, key: &CellKey) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.key == *key)
    }
}

pub struct Inputs {
    pub bars: BarSeries,
    pub tweets: Vec<TweetEmotion>,
    pub clean: Option<CleanReport>,
    pub plant: Option<PlantLog>,
}

pub fn load_inputs(cfg: &ExperimentConfig) -> Result<Inputs> {
    let window = cfg.session_window();
    if let Some(scenario) = &cfg.synth {
        let corpus = synth::generate(scenario).map_err(|e| e.in_stage("synth", "scenario"))?;
        return Ok(Inputs {
            bars: filter_session(&corpus.bars, window),
            tweets: corpus.tweets,
            clean: None,
            plant: Some(corpus.plant),
        });
    }
    let d = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("no data source configured".into()))?;
    let open = |p: &Path| File::open(p).map_err(|e| Error::Io(e).in_stage("ingest", p.display().to_string()));
    let (bars, clean) = read_bars_csv(open(&d.bars)?, d.frequency).map_err(|e| e.in_stage("ingest", d.bars.display().to_string()))?;
    let tweets = read_tweets_csv(open(&d.tweets)?).map_err(|e| e.in_stage("ingest", d.tweets.display().to_string()))?;
    Ok(Inputs {
        bars: filter_session(&bars, window),
        tweets,
        clean: Some(clean),
        plant: None,
    })
}

/// Everything at one bar frequency that does not depend on θ.
pub struct FrequencyData {
    pub frequency: Frequency,
    pub bars: BarSeries,
    pub returns: ReturnSeries,
    pub vols: crate::labeling::VolatilitySeries,
    pub records: Vec<IntervalRecord>,
}

pub fn prepare_frequency(inputs: &Inputs, frequency: Frequency, cfg: &ExperimentConfig) -> Result<FrequencyData> {
    let bars = resample(&inputs.bars, frequency)?;
    let returns = log_returns(&bars)?;
    let vols = rolling_volatility(&returns, cfg.window, false)?;
    let (emotions, _) = aggregate_emotions(&inputs.tweets, &bars.timestamps(), frequency.duration(), cfg.forward_fill);
    let records = assemble_features(&returns, &bars, &vols, &emotions)?;
    Ok(FrequencyData {
        frequency,
        bars,
        returns,
        vols,
        records,
    })
}

/// Labeled rows at one θ, split chronologically and scaled on train only.
pub struct Dataset {
    pub params: LabelParams,
    pub records: Vec<IntervalRecord>,
    pub labels: Vec<Overreaction>,
    pub split: DatasetSplit,
    pub scaler: FeatureScaler,
    pub x: FeatureMatrix,
}

impl Dataset {
    fn timestamps(&self, range: std::ops::Range<usize>) -> Vec<NaiveDateTime> {
        self.records[range].iter().map(|r| r.timestamp).collect()
    }
}

pub fn build_dataset(fd: &FrequencyData, theta: f64, cfg: &ExperimentConfig) -> Result<Dataset> {
    let params = LabelParams::new(theta, cfg.tc, cfg.window)?;
    let labels = label(&fd.returns, &fd.vols, &params)?;
    let mut records = Vec::with_capacity(labels.len());
    let mut states = Vec::with_capacity(labels.len());
    for l in &labels {
        let i = fd
            .records
            .binary_search_by_key(&l.origin, |r| r.timestamp)
            .map_err(|_| Error::Alignment {
                message: "label origin without a feature row".into(),
                timestamps: vec![l.origin],
            })?;
        records.push(fd.records[i]);
        states.push(l.state);
    }
    let split = chronological_split(records.len(), &cfg.split)?;
    let scaler = fit_scaler(&records[split.train.clone()])?;
    let x = scaler.transform(&records)?;
    Ok(Dataset {
        params,
        records,
        labels: states,
        split,
        scaler,
        x,
    })
}

/// Bars from the first to the last row's timestamp.
fn segment_bars(bars: &BarSeries, timestamps: &[NaiveDateTime]) -> Result<(BarSeries, usize)> {
    let missing = || Error::Alignment {
        message: "segment boundary is not a bar".into(),
        timestamps: timestamps.first().into_iter().chain(timestamps.last()).copied().collect(),
    };
    let (first, last) = match (timestamps.first(), timestamps.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::EmptySeries("segment rows")),
    };
    let start = bars.position(first).ok_or_else(missing)?;
    let end = bars.position(last).ok_or_else(missing)?;
    Ok((BarSeries::new(bars.bars[start..=end].to_vec(), bars.frequency), start))
}

struct Segment {
    bars: BarSeries,
    offset: usize,
    timestamps: Vec<NaiveDateTime>,
}

impl Segment {
    fn new(fd: &FrequencyData, ds: &Dataset, range: std::ops::Range<usize>) -> Result<Self> {
        let timestamps = ds.timestamps(range);
        let (bars, offset) = segment_bars(&fd.bars, &timestamps)?;
        Ok(Segment { bars, offset, timestamps })
    }

    fn run_model(&self, probs: &[ClassProbabilities], rule: &SignalRule, tc: f64) -> Result<Simulation> {
        let signals = align_signals(&self.bars, &self.timestamps, &generate_signals(probs, rule.threshold))?;
        simulate(&self.bars, &signals, rule, tc)
    }

    fn run_full(&self, full_signals: &[Signal], rule: &SignalRule, tc: f64) -> Result<Simulation> {
        simulate(&self.bars, &full_signals[self.offset..self.offset + self.bars.len()], rule, tc)
    }
}

fn outcome(rule: SignalRule, train: &Simulation, validation: &Simulation, a: f64) -> RuleOutcome {
    RuleOutcome {
        rule,
        train_sharpe: sharpe(&train.curve.returns(), a, 0.0).ok(),
        validation_sharpe: sharpe(&validation.curve.returns(), a, 0.0).ok(),
        train_trades: train.trades.len(),
    }
}

/// Overreaction benchmark at one (frequency, θ): realized-label signals over
/// the whole series and the holding policy chosen like the model's rule.
struct OverreactionPlan {
    signals: Vec<Signal>,
    choice: Option<RuleChoice>,
}

/// The benchmark's threshold is a placeholder: its signals are discrete.
const DISCRETE_THRESHOLD: f64 = 0.5;

fn plan_overreaction(fd: &FrequencyData, ds: &Dataset, cfg: &ExperimentConfig, a: f64) -> Result<OverreactionPlan> {
    let signals =
        crate::backtest::overreaction_signals(&fd.returns, &fd.vols, &ds.params, &fd.bars, cfg.contrarian)?;
    let train = Segment::new(fd, ds, ds.split.train.clone())?;
    let val = Segment::new(fd, ds, ds.split.validation.clone())?;
    let mut outcomes = Vec::new();
    for &h in &cfg.holdings {
        let rule = SignalRule::new(DISCRETE_THRESHOLD, h)?;
        outcomes.push(outcome(rule, &train.run_full(&signals, &rule, cfg.tc)?, &val.run_full(&signals, &rule, cfg.tc)?, a));
    }
    let choice = match select_threshold(&outcomes) {
        Ok(c) => Some(c),
        Err(Error::NoSignal) => None,
        Err(e) => return Err(e),
    };
    Ok(OverreactionPlan { signals, choice })
}

struct TestData {
    x: FeatureMatrix,
    values: FeatureMatrix,
    labels: Vec<Overreaction>,
    segment: Segment,
}

fn explain(
    model: &TrainedModel,
    test: &TestData,
    train_x: &FeatureMatrix,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Vec<ShapSummary>> {
    if cfg.shap_rows == 0 {
        return Ok(Vec::new());
    }
    let background = crate::analytics::sample_background(train_x, cfg.shap_background, derive_seed(seed, &[str_key("background")]));
    let n = test.x.n_rows();
    let mut idx: Vec<usize> = if n <= cfg.shap_rows {
        (0..n).collect()
    } else {
        let mut rng = task_rng(seed, &[str_key("explain")]);
        sample(&mut rng, n, cfg.shap_rows).into_vec()
    };
    idx.sort_unstable();
    let rows = test.x.select(&idx);
    let values = test.values.select(&idx);
    [Overreaction::Up, Overreaction::Down]
        .into_iter()
        .map(|class| shap_summary(&class_output(model, class), class, &rows, Some(&values), &background))
        .collect()
}

fn run_cell(
    key: CellKey,
    fd: &FrequencyData,
    ds: &Dataset,
    over: &OverreactionPlan,
    cfg: &ExperimentConfig,
    explain_model: bool,
) -> Result<CellReport> {
    let seed = key.seed(cfg.seed);
    let a = annualization_factor(key.frequency)?;
    let split = &ds.split;
    let train_x = ds.x.slice(split.train.clone());
    let train_y = &ds.labels[split.train.clone()];
    let dist = class_distribution(train_y)?;
    let weights = class_weights(&dist);

    let folds = expanding_cv_folds(train_y.len(), cfg.cv_folds, cfg.split.embargo)
        .map_err(|e| e.in_stage("search", key.label()))?;
    let search = randomized_search(
        key.model,
        &train_x,
        train_y,
        &folds,
        cfg.search_iterations,
        derive_seed(seed, &[str_key("search")]),
        cfg.cv_metric,
    )
    .map_err(|e| e.in_stage("search", key.label()))?;
    let model = train(&search.best, &train_x, train_y, &weights).map_err(|e| e.in_stage("train", key.label()))?;
    let prior = train(&ClassifierSpec::default_for(Family::PriorBaseline, seed), &train_x, train_y, &weights)?;

    // Threshold and holding from train Sharpe, confirmed on validation.
    let select = || -> Result<Option<RuleChoice>> {
        let train_seg = Segment::new(fd, ds, split.train.clone())?;
        let val_seg = Segment::new(fd, ds, split.validation.clone())?;
        let p_train = model.predict_proba(&train_x)?;
        let p_val = model.predict_proba(&ds.x.slice(split.validation.clone()))?;
        let mut outcomes = Vec::new();
        for &c in &cfg.thresholds {
            for &h in &cfg.holdings {
                let rule = SignalRule::new(c, h)?;
                outcomes.push(outcome(
                    rule,
                    &train_seg.run_model(&p_train, &rule, cfg.tc)?,
                    &val_seg.run_model(&p_val, &rule, cfg.tc)?,
                    a,
                ));
            }
        }
        match select_threshold(&outcomes) {
            Ok(c) => Ok(Some(c)),
            Err(Error::NoSignal) => Ok(None),
            Err(e) => Err(e),
        }
    };
    let selection = select().map_err(|e| e.in_stage("select", key.label()))?;

    let test = TestSegment::new(TestData {
        x: ds.x.slice(split.test.clone()),
        values: FeatureMatrix::from_records(&ds.records[split.test.clone()]),
        labels: ds.labels[split.test.clone()].to_vec(),
        segment: Segment::new(fd, ds, split.test.clone()).map_err(|e| e.in_stage("evaluate", key.label()))?,
    });

    let evaluate = || -> Result<(ClassificationReport, f64, Vec<StrategyReport>, Vec<ShapSummary>)> {
        let t = test.read();
        let seg = &t.segment;
        let report = classification_report(&model, &t.x, &t.labels)?;
        let prior_predictions: Vec<Overreaction> = prior.predict_proba(&t.x)?.iter().map(predicted_class).collect();
        let prior_accuracy = ClassificationReport::from_predictions(&t.labels, &prior_predictions)?.accuracy;

        let fallback = SignalRule::new(DISCRETE_THRESHOLD, cfg.holdings[0])?;
        let model_sim = match &selection {
            Some(choice) => seg.run_model(&model.predict_proba(&t.x)?, &choice.rule, cfg.tc)?,
            None => simulate(&seg.bars, &vec![Signal::Flat; seg.bars.len()], &fallback, cfg.tc)?,
        };
        let rule = selection.as_ref().map(|c| c.rule);
        let mut strategies = vec![StrategyReport::new(
            MODEL_STRATEGY,
            rule,
            selection.as_ref().and_then(|c| c.validation_sharpe),
            model_sim,
            a,
        )?];

        let curve = benchmark_buy_hold(&seg.bars, cfg.tc)?;
        let hold = Simulation {
            status: SimulationStatus::Traded,
            trades: Vec::new(),
            switches: Vec::new(),
            curve,
        };
        let mut hold_report = StrategyReport::new(BUY_HOLD, None, None, hold, a)?;
        hold_report.perf.n_trades = 1;
        strategies.push(hold_report);

        let random_rule = rule.unwrap_or(fallback);
        let random_signals = sample_random_signals(seg.bars.len(), &dist, derive_seed(seed, &[str_key(RANDOM)]))?;
        let random = simulate(&seg.bars, &random_signals, &random_rule, cfg.tc)?;
        strategies.push(StrategyReport::new(RANDOM, Some(random_rule), None, random, a)?);

        let over_rule = over.choice.as_ref().map(|c| c.rule).unwrap_or(fallback);
        let over_sim = seg.run_full(&over.signals, &over_rule, cfg.tc)?;
        strategies.push(StrategyReport::new(
            OVERREACTION,
            Some(over_rule),
            over.choice.as_ref().and_then(|c| c.validation_sharpe),
            over_sim,
            a,
        )?);

        let shap = if explain_model {
            explain(&model, t, &train_x, cfg, seed)?
        } else {
            Vec::new()
        };
        Ok((report, prior_accuracy, strategies, shap))
    };
    let (test_classification, prior_test_accuracy, strategies, shap) =
        evaluate().map_err(|e| e.in_stage("evaluate", key.label()))?;

    Ok(CellReport {
        key,
        seed,
        n_rows: ds.records.len(),
        split: ds.split.clone(),
        train_distribution: dist,
        search,
        model,
        test_classification,
        prior_test_accuracy,
        selection,
        strategies,
        shap,
        test_reads: test.reads(),
    })
}

/// Sums log returns into right-closed buckets of `minutes`.
fn coarsen(series: &[(NaiveDateTime, f64)], minutes: u32) -> Vec<(NaiveDateTime, f64)> {
    let mut out: Vec<(NaiveDateTime, f64)> = Vec::new();
    for &(ts, r) in series {
        let end = bucket_end(ts, minutes);
        match out.last_mut() {
            Some(last) if last.0 == end => last.1 += r,
            _ => out.push((end, r)),
        }
    }
    out
}

fn winner_name(w: JkWinner) -> &'static str {
    match w {
        JkWinner::First => "ml",
        JkWinner::Second => "over",
        JkWinner::Neither => "none",
    }
}

/// The first cell with the highest validation Sharpe for `strategy`.
fn best_cell<'a>(cells: impl Iterator<Item = &'a CellReport>, strategy: &str) -> Option<&'a CellReport> {
    let mut best: Option<(&CellReport, f64)> = None;
    for c in cells {
        let Some(s) = c.strategy(strategy) else { continue };
        let Some(v) = s.validation_sharpe else { continue };
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((c, v));
        }
    }
    best.map(|(c, _)| c)
}

/// Best ML strategy against the best overreaction benchmark, both picked by
/// validation Sharpe, per frequency and over the whole grid.
pub fn compare(cells: &[CellReport], frequencies: &[Frequency]) -> (Vec<JkRow>, Vec<String>) {
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let is_ml = |c: &&CellReport| c.key.model != Family::PriorBaseline;
    let mut scopes: Vec<(String, Vec<&CellReport>)> = frequencies
        .iter()
        .map(|f| (f.label(), cells.iter().filter(|c| c.key.frequency == *f).collect()))
        .collect();
    scopes.push(("GLOBAL".to_string(), cells.iter().collect()));
    for (timeframe, scope) in scopes {
        let ml = best_cell(scope.iter().copied().filter(is_ml), MODEL_STRATEGY);
        let over = best_cell(scope.iter().copied(), OVERREACTION);
        let (Some(ml), Some(over)) = (ml, over) else {
            notes.push(format!("{timeframe}: no comparison, no strategy with a validation Sharpe"));
            continue;
        };
        let coarse = ml.key.frequency.max(over.key.frequency);
        let series = |c: &CellReport, name: &str| {
            let s = c.strategy(name).unwrap().timed_returns();
            if c.key.frequency == coarse {
                s
            } else {
                coarsen(&s, coarse.minutes())
            }
        };
        let (r1, r2) = align_on_timestamps(&series(ml, MODEL_STRATEGY), &series(over, OVERREACTION));
        let a = match annualization_factor(coarse) {
            Ok(a) => a,
            Err(e) => {
                notes.push(format!("{timeframe}: {e}"));
                continue;
            }
        };
        match jobson_korkie(&r1, &r2, a) {
            Ok(jk) => rows.push(JkRow {
                timeframe,
                comparison: "best-ml-vs-best-over".to_string(),
                model: format!("{}@theta={}", ml.key.model.name(), ml.key.theta),
                ml_sharpe: jk.sr1,
                over_sharpe: jk.sr2,
                z: jk.z,
                p: jk.p,
                winner: winner_name(jk.winner).to_string(),
            }),
            Err(e) => notes.push(format!("{timeframe}: comparison skipped: {e}")),
        }
    }
    (rows, notes)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(cfg, true)
}

/// `explain_models = false` skips attribution, the most expensive stage.
pub fn run_experiment_with(cfg: &ExperimentConfig, explain_models: bool) -> Result<ExperimentReport> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let mut report = ExperimentReport::empty(cfg);
    report.manifest.data = DataSummary {
        source: if cfg.synth.is_some() { "synth" } else { "files" }.to_string(),
        bars: inputs.bars.len(),
        tweets: inputs.tweets.len(),
        clean: inputs.clean,
        plant_events: inputs.plant.as_ref().map(|p| p.events.len()),
    };
    report
        .manifest
        .notes
        .push("annualization uses 252 days of 390/m intervals (6.5-hour basis) for every session window".into());

    for &frequency in &cfg.frequencies {
        let fkey = frequency.label();
        let a = annualization_factor(frequency).map_err(|e| e.in_stage("prepare", fkey.clone()))?;
        report.manifest.annualization.insert(frequency.minutes(), a);
        let fd = prepare_frequency(&inputs, frequency, cfg).map_err(|e| e.in_stage("prepare", fkey.clone()))?;
        for &theta in &cfg.thetas {
            let tkey = format!("{fkey}_theta-{theta}");
            let ds = build_dataset(&fd, theta, cfg).map_err(|e| e.in_stage("label", tkey.clone()))?;
            let over = plan_overreaction(&fd, &ds, cfg, a).map_err(|e| e.in_stage("benchmark", tkey.clone()))?;
            for &model in &cfg.models {
                let key = CellKey { frequency, theta, model };
                let cell = run_cell(key, &fd, &ds, &over, cfg, explain_models)?;
                report.manifest.cells.push(ManifestCell {
                    key: key.label(),
                    seed: cell.seed,
                });
                report.cells.push(cell);
            }
        }
    }
    let (rows, notes) = compare(&report.cells, &cfg.frequencies);
    report.comparisons = rows;
    report.manifest.notes.extend(notes);
    Ok(report)
}

/// Search and final fit for every cell, without touching the test segment.
pub fn train_models(cfg: &ExperimentConfig) -> Result<Vec<(CellKey, SearchResult, TrainedModel)>> {
    cfg.validate()?;
    let inputs = load_inputs(cfg)?;
    let mut out = Vec::new();
    for &frequency in &cfg.frequencies {
        let fd = prepare_frequency(&inputs, frequency, cfg).map_err(|e| e.in_stage("prepare", frequency.label()))?;
        for &theta in &cfg.thetas {
            let ds = build_dataset(&fd, theta, cfg).map_err(|e| e.in_stage("label", format!("{}_theta-{theta}", frequency.label())))?;
            let train_x = ds.x.slice(ds.split.train.clone());
            let train_y = &ds.labels[ds.split.train.clone()];
            let weights = class_weights(&class_distribution(train_y)?);
            for &model in &cfg.models {
                let key = CellKey { frequency, theta, model };
                let seed = key.seed(cfg.seed);
                let folds = expanding_cv_folds(train_y.len(), cfg.cv_folds, cfg.split.embargo)
                    .map_err(|e| e.in_stage("search", key.label()))?;
                let search = randomized_search(
                    model,
                    &train_x,
                    train_y,
                    &folds,
                    cfg.search_iterations,
                    derive_seed(seed, &[str_key("search")]),
                    cfg.cv_metric,
                )
                .map_err(|e| e.in_stage("search", key.label()))?;
                let fitted = train(&search.best, &train_x, train_y, &weights).map_err(|e| e.in_stage("train", key.label()))?;
                out.push((key, search, fitted));
            }
        }
    }
    Ok(out)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes the manifest, the JK table and one directory per cell holding its
/// summary, CV table, model, equity curves, trade logs and attributions.
pub fn emit_reports(report: &ExperimentReport, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let manifest = out.join("manifest.json");
    write_json(&manifest, &report.manifest)?;
    written.push(manifest);
    if report.cells.is_empty() && report.comparisons.is_empty() {
        return Ok(written);
    }
    let jk = out.join("jk.csv");
    write_jk_csv(create(&jk)?, &report.comparisons)?;
    written.push(jk);
    for cell in &report.cells {
        let dir = out.join("cells").join(cell.key.label());
        fs::create_dir_all(&dir)?;
        let summary = dir.join("summary.json");
        write_json(&summary, &cell.summary())?;
        written.push(summary);
        let cv = dir.join("cv.csv");
        write_cv_csv(create(&cv)?, &cell.search.table)?;
        written.push(cv);
        let model = dir.join("model.json");
        fs::write(&model, cell.model.to_json()? + "\n")?;
        written.push(model);
        for s in &cell.strategies {
            let equity = dir.join(format!("equity_{}.csv", s.name));
            write_equity_csv(create(&equity)?, &s.curve)?;
            written.push(equity);
            let trades = dir.join(format!("trades_{}.csv", s.name));
            write_trades_csv(create(&trades)?, &s.trades)?;
            written.push(trades);
        }
        if !cell.shap.is_empty() {
            let shap = dir.join("shap.csv");
            write_shap_csv(create(&shap)?, &cell.shap)?;
            written.push(shap);
        }
    }
    Ok(written)
}

/// Reads the cell summaries of an emitted bundle, in grid order.
pub fn read_summaries(out: &Path) -> Result<(Manifest, Vec<CellSummary>)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json"))?)?;
    let summaries = manifest
        .cells
        .iter()
        .map(|c| -> Result<CellSummary> {
            let path = out.join("cells").join(&c.key).join("summary.json");
            Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, summaries))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            synth: Some(ScenarioConfig {
                days: 6,
                ..ScenarioConfig::default()
            }),
            thetas: vec![1.5],
            models: vec![Family::MultinomialLogistic],
            search_iterations: 1,
            cv_folds: 2,
            shap_rows: 3,
            shap_background: 4,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn config_requires_one_source() {
        let mut cfg = small_config();
        cfg.validate().unwrap();
        cfg.synth = None;
        assert!(cfg.validate().unwrap_err().is_config_error());
        cfg.synth = small_config().synth;
        cfg.data = Some(DataSource {
            bars: "bars.csv".into(),
            tweets: "tweets.csv".into(),
            frequency: Frequency::ONE_MINUTE,
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_rejects_bad_values() {
        for mutate in [
            (|c: &mut ExperimentConfig| c.thetas = vec![0.0]) as fn(&mut ExperimentConfig),
            |c| c.thetas = vec![],
            |c| c.thresholds = vec![1.0],
            |c| c.holdings = vec![Holding::Fixed(0)],
            |c| c.tc = -0.1,
            |c| c.frequencies = vec![Frequency::FIVE_MINUTES, Frequency::FIVE_MINUTES],
            |c| c.search_iterations = 0,
        ] {
            let mut cfg = small_config();
            mutate(&mut cfg);
            assert!(cfg.validate().unwrap_err().is_config_error(), "{cfg:?}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let cfg = small_config();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn toml_holdings_syntax() {
        let cfg = ExperimentConfig::from_toml_str(
            "holdings = [{ policy = \"fixed\", h = 5 }, { policy = \"until-opposite\" }]\n[synth]\ndays = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.holdings, vec![Holding::Fixed(5), Holding::UntilOpposite]);
        assert_eq!(cfg.synth.unwrap().days, 3);
        assert!(ExperimentConfig::from_toml_str("unknown_key = 1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = small_config();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.tc = 0.002;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn coarsen_sums_within_buckets() {
        let t = |s: &str| crate::market_data::parse_timestamp(s).unwrap();
        let fine = [
            (t("2024-01-02T10:05:00"), 0.1),
            (t("2024-01-02T10:10:00"), 0.2),
            (t("2024-01-02T10:15:00"), 0.3),
            (t("2024-01-02T10:20:00"), 0.4),
        ];
        let c = coarsen(&fine, 15);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].0, t("2024-01-02T10:15:00"));
        assert!((c[0].1 - 0.6).abs() < 1e-15);
        assert_eq!(c[1], (t("2024-01-02T10:30:00"), 0.4));
    }

    #[test]
    fn test_segment_counts_reads() {
        let s = TestSegment::new(3);
        assert_eq!(s.reads(), 0);
        assert_eq!(*s.read(), 3);
        assert_eq!(s.reads(), 1);
    }

    #[test]
    fn small_run_has_four_strategies() {
        let report = run_experiment(&small_config()).unwrap();
        assert_eq!(report.cells.len(), 1);
        let cell = &report.cells[0];
        let names: Vec<&str> = cell.strategies.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, [MODEL_STRATEGY, BUY_HOLD, RANDOM, OVERREACTION]);
        assert_eq!(cell.test_reads, 1);
        assert_eq!(cell.shap.len(), 2);
    }
}

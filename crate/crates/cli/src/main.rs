use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use overreaction::emotion_features::{read_tweets_csv, write_tweets_csv};
use overreaction::experiment::{
    emit_reports, read_summaries, run_experiment_with, train_models, write_json, DataSource, ExperimentConfig,
};
use overreaction::labeling::{class_distribution, label, rolling_volatility, write_labels_csv, LabelParams};
use overreaction::market_data::{filter_session, log_returns, read_bars_csv, resample, write_bars_csv, Frequency, SessionWindow};
use overreaction::modeling::search::write_cv_csv;
use overreaction::modeling::Family;
use overreaction::synth::{self, PlantedEffect, ScenarioConfig};
use overreaction::Error;

const OUT_ENV: &str = "OVERREACTION_OUT";

#[derive(Parser)]
#[command(name = "overreaction", version, about = "Intraday overreaction experiments on bar and tweet-emotion data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean a bar file (and optionally validate a tweet file).
    Ingest(IngestArgs),
    /// Generate a synthetic bar and tweet corpus.
    Synth(SynthArgs),
    /// Label a bar file with overreaction states.
    Label(LabelArgs),
    /// Search and fit models for every grid cell without touching test data.
    Train(ExperimentArgs),
    /// Full pipeline without attribution.
    Backtest(ExperimentArgs),
    /// Print a summary of an emitted report bundle.
    Report(ReportArgs),
    /// Full pipeline: label, train, select, backtest, explain and report.
    Run(ExperimentArgs),
}

#[derive(Args)]
struct OutArg {
    /// Output directory.
    #[arg(long, env = OUT_ENV, default_value = "overreaction-out")]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    bars: PathBuf,
    /// Bar size of the input file in minutes.
    #[arg(long, default_value_t = 1)]
    frequency: u32,
    #[arg(long)]
    tweets: Option<PathBuf>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario TOML; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    days: Option<usize>,
    /// none, momentum-after-fear or mean-revert-after-fear.
    #[arg(long)]
    effect: Option<String>,
    #[arg(long)]
    strength: Option<f64>,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    bars: PathBuf,
    /// Bar size of the input file in minutes.
    #[arg(long, default_value_t = 1)]
    frequency: u32,
    /// Resample to this bar size before labeling.
    #[arg(long)]
    target_frequency: Option<u32>,
    #[arg(long, default_value_t = 2.0)]
    theta: f64,
    #[arg(long, default_value_t = overreaction::labeling::DEFAULT_TC)]
    tc: f64,
    #[arg(long, default_value_t = overreaction::labeling::DEFAULT_WINDOW)]
    window: usize,
    #[command(flatten)]
    out: OutArg,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory written by `run` or `backtest`.
    #[arg(long)]
    bundle: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment TOML; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the default synthetic scenario as input.
    #[arg(long, conflicts_with_all = ["bars", "tweets"])]
    synth: bool,
    #[arg(long, requires = "tweets")]
    bars: Option<PathBuf>,
    #[arg(long, requires = "bars")]
    tweets: Option<PathBuf>,
    /// Bar size of `--bars` in minutes.
    #[arg(long, default_value_t = 1)]
    input_frequency: u32,
    #[arg(long)]
    seed: Option<u64>,
    /// Repeatable.
    #[arg(long = "frequency")]
    frequencies: Vec<u32>,
    /// Repeatable.
    #[arg(long = "theta")]
    thetas: Vec<f64>,
    /// Repeatable; a family name such as gradient-boosted-trees.
    #[arg(long = "model")]
    models: Vec<String>,
    #[arg(long)]
    tc: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    search_iterations: Option<usize>,
    #[arg(long)]
    cv_folds: Option<usize>,
    #[arg(long)]
    shap_rows: Option<usize>,
    #[arg(long)]
    shap_background: Option<usize>,
    #[command(flatten)]
    out: OutArg,
}

impl ExperimentArgs {
    fn config(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if self.synth {
            cfg.data = None;
            cfg.synth = Some(cfg.synth.take().unwrap_or_default());
        }
        if let (Some(bars), Some(tweets)) = (&self.bars, &self.tweets) {
            cfg.synth = None;
            cfg.data = Some(DataSource {
                bars: bars.clone(),
                tweets: tweets.clone(),
                frequency: config_frequency(self.input_frequency)?,
            });
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if !self.frequencies.is_empty() {
            cfg.frequencies = self.frequencies.iter().map(|&m| config_frequency(m)).collect::<Result<_, _>>()?;
        }
        if !self.thetas.is_empty() {
            cfg.thetas = self.thetas.clone();
        }
        if !self.models.is_empty() {
            cfg.models = self.models.iter().map(|m| Family::parse(m)).collect::<Result<_, _>>()?;
        }
        cfg.tc = self.tc.unwrap_or(cfg.tc);
        cfg.window = self.window.unwrap_or(cfg.window);
        cfg.search_iterations = self.search_iterations.unwrap_or(cfg.search_iterations);
        cfg.cv_folds = self.cv_folds.unwrap_or(cfg.cv_folds);
        cfg.shap_rows = self.shap_rows.unwrap_or(cfg.shap_rows);
        cfg.shap_background = self.shap_background.unwrap_or(cfg.shap_background);
        Ok(cfg)
    }
}

fn config_frequency(m: u32) -> Result<Frequency, Error> {
    Frequency::new(m).map_err(|e| Error::Config(e.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<File, Error> {
    File::open(path).map_err(|e| Error::Io(e).in_stage("ingest", path.display().to_string()))
}

fn ingest(args: &IngestArgs) -> Result<(), Error> {
    let out = &args.out.out;
    fs::create_dir_all(out)?;
    let (bars, clean) = read_bars_csv(open(&args.bars)?, config_frequency(args.frequency)?)?;
    let bars = filter_session(&bars, SessionWindow::extended_hours());
    write_bars_csv(create(&out.join("bars.csv"))?, &bars)?;
    let mut n_tweets = None;
    if let Some(t) = &args.tweets {
        let tweets = read_tweets_csv(open(t)?)?;
        write_tweets_csv(create(&out.join("tweets.csv"))?, &tweets)?;
        n_tweets = Some(tweets.len());
    }
    write_json(
        &out.join("ingest.json"),
        &serde_json::json!({ "bars": bars.len(), "tweets": n_tweets, "clean": clean }),
    )?;
    println!(
        "{} bars kept ({} duplicates, {} invalid dropped, {} forward-filled)",
        bars.len(),
        clean.duplicates_dropped,
        clean.invalid_dropped,
        clean.forward_filled
    );
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<(), Error> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            toml::from_str::<ScenarioConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = args.days {
        cfg.days = d;
    }
    if let Some(e) = &args.effect {
        cfg.effect = serde_json::from_value::<PlantedEffect>(serde_json::Value::String(e.clone()))
            .map_err(|_| Error::Config(format!("unknown planted effect `{e}`")))?;
    }
    if let Some(s) = args.strength {
        cfg.effect_strength = s;
    }
    cfg.validate()?;
    let corpus = synth::generate(&cfg)?;
    synth::write_corpus(&args.out.out, &corpus)?;
    println!(
        "{} bars, {} tweets, {} planted events written to {}",
        corpus.bars.len(),
        corpus.tweets.len(),
        corpus.plant.events.len(),
        args.out.out.display()
    );
    Ok(())
}

fn run_label(args: &LabelArgs) -> Result<(), Error> {
    let params = LabelParams::new(args.theta, args.tc, args.window).map_err(|e| Error::Config(e.to_string()))?;
    let (bars, _) = read_bars_csv(open(&args.bars)?, config_frequency(args.frequency)?)?;
    let bars = filter_session(&bars, SessionWindow::extended_hours());
    let bars = match args.target_frequency {
        Some(m) => resample(&bars, config_frequency(m)?)?,
        None => bars,
    };
    let returns = log_returns(&bars)?;
    let vols = rolling_volatility(&returns, params.window, false)?;
    let labels = label(&returns, &vols, &params)?;
    fs::create_dir_all(&args.out.out)?;
    write_labels_csv(create(&args.out.out.join("labels.csv"))?, &labels)?;
    let states: Vec<_> = labels.iter().map(|l| l.state).collect();
    let d = class_distribution(&states)?;
    println!(
        "{} labels: up {:.4}, neutral {:.4}, down {:.4}",
        labels.len(),
        d.up,
        d.neutral,
        d.down
    );
    Ok(())
}

fn run_train(args: &ExperimentArgs) -> Result<(), Error> {
    let cfg = args.config()?;
    let out = &args.out.out;
    for (key, search, model) in train_models(&cfg)? {
        let dir = out.join("models").join(key.label());
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("model.json"), model.to_json()? + "\n")?;
        write_cv_csv(create(&dir.join("cv.csv"))?, &search.table)?;
        println!(
            "{}: best config {} (mean CV score {:.4})",
            key.label(),
            search.best_config_id,
            search.mean_scores[search.best_config_id]
        );
    }
    Ok(())
}

fn run_pipeline(args: &ExperimentArgs, explain: bool) -> Result<(), Error> {
    let cfg = args.config()?;
    let report = run_experiment_with(&cfg, explain)?;
    emit_reports(&report, &args.out.out)?;
    print_summary(&args.out.out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

fn print_summary(bundle: &Path) -> Result<(), Error> {
    let (manifest, cells) = read_summaries(bundle)?;
    println!("config {}  seed {}", manifest.config_hash, manifest.master_seed);
    for c in &cells {
        println!(
            "{}  accuracy {:.4} (prior {:.4})",
            c.key.label(),
            c.test_classification.accuracy,
            c.prior_test_accuracy
        );
        for s in &c.strategies {
            println!(
                "  {:<14} sharpe {:>9}  mdd {:.4}  trades {:>5}  {}",
                s.name,
                fmt_opt(s.perf.sharpe),
                s.perf.max_drawdown,
                s.perf.n_trades,
                s.status
            );
        }
    }
    let jk = bundle.join("jk.csv");
    if jk.is_file() {
        print!("{}", fs::read_to_string(jk)?);
    }
    for n in &manifest.notes {
        println!("note: {n}");
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        1
    } else if e.is_data_error() {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Synth(a) => run_synth(a),
        Command::Label(a) => run_label(a),
        Command::Train(a) => run_train(a),
        Command::Backtest(a) => run_pipeline(a, false),
        Command::Report(a) => print_summary(&a.bundle),
        Command::Run(a) => run_pipeline(a, true),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_overreaction"));
    c.env_remove("OVERREACTION_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn synth(dir: &Path, days: &str) {
    let o = run(&["synth", "--seed", "3", "--days", days, "--out", dir.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_then_run_on_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "6");
    for f in ["bars.csv", "tweets.csv", "plant.json"] {
        assert!(data.join(f).is_file());
    }
    let out = dir.path().join("out");
    let o = run(&[
        "run",
        "--bars",
        data.join("bars.csv").to_str().unwrap(),
        "--tweets",
        data.join("tweets.csv").to_str().unwrap(),
        "--input-frequency",
        "5",
        "--theta",
        "1.5",
        "--model",
        "multinomial-logistic",
        "--search-iterations",
        "1",
        "--cv-folds",
        "2",
        "--shap-rows",
        "3",
        "--shap-background",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("manifest.json").is_file());
    assert!(out.join("jk.csv").is_file());

    let o = run(&["report", "--bundle", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("5min_theta-1.5_multinomial-logistic"), "{text}");
    assert!(!text.contains("Traded") && !text.contains("NoTrades"));
}

#[test]
fn label_writes_labels() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    let out = dir.path().join("labels");
    let o = run(&[
        "label",
        "--bars",
        dir.path().join("bars.csv").to_str().unwrap(),
        "--frequency",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("labels.csv")).unwrap();
    assert!(text.lines().count() > 100);
}

#[test]
fn out_directory_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["synth", "--days", "2"])
        .env("OVERREACTION_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("bars.csv").is_file());
}

#[test]
fn config_errors_exit_one() {
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["run", "--bars", "/nonexistent/bars.csv", "--tweets", "/nonexistent/t.csv"])), 1);
    assert_eq!(code(&run(&["run", "--synth", "--theta", "0"])), 1);
    assert_eq!(code(&run(&["run", "--synth", "--model", "oracle"])), 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "no_such_key = 3\n").unwrap();
    assert_eq!(code(&run(&["run", "--config", cfg.to_str().unwrap()])), 1);
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["run", "--help"])), 0);
}

#[test]
fn corrupt_bars_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "3");
    let bars = dir.path().join("bars.csv");
    let mut text = fs::read_to_string(&bars).unwrap();
    text.push_str("not,a,valid,row,at,all\n");
    fs::write(&bars, text).unwrap();
    let o = run(&[
        "ingest",
        "--bars",
        bars.to_str().unwrap(),
        "--frequency",
        "5",
        "--out",
        dir.path().join("clean").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn repeated_runs_write_identical_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("experiment.toml");
    fs::write(
        &cfg,
        "seed = 9\nthetas = [1.5]\nmodels = [\"gradient-boosted-trees\"]\nsearch_iterations = 2\ncv_folds = 2\nshap_rows = 4\nshap_background = 4\n\n[synth]\nseed = 9\ndays = 6\n",
    )
    .unwrap();
    let outs = [dir.path().join("a"), dir.path().join("b")];
    for out in &outs {
        let o = run(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = tree(&outs[0]);
    assert!(a.len() > 10);
    assert_eq!(a, tree(&outs[1]));
}

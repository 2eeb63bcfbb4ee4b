//! End-to-end behaviour of the `advsamp` binary.

use std::path::Path;
use std::process::{Command, Output};

const SMALL: [&str; 6] = [
    "committee.hidden_units=16",
    "committee.hidden_layers=2",
    "train.epochs=20",
    "attack.steps=30",
    "eval.resolution=20",
    "potential.initial_candidates=300",
];

fn advsamp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advsamp")).args(args).output().unwrap()
}

fn with_small<'a>(mut args: Vec<&'a str>, extra: &[&'a str]) -> Vec<&'a str> {
    for s in SMALL.iter().chain(extra) {
        args.push("--set");
        args.push(s);
    }
    args
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn one_generation_run_writes_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = advsamp(&with_small(vec!["--threads", "1", "run", "--out", out], &["generations=1"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records = read(&dir.path().join("records.csv"));
    assert_eq!(records.lines().count(), 2);
    assert!(records.lines().nth(1).unwrap().starts_with("1,"));
    for f in ["config.resolved", "manifest.txt", "final_dataset.csv", "gen_1/dataset.csv", "gen_1/attack_log.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert!(read(&dir.path().join("manifest.txt")).contains("finished_unix"));
}

#[test]
fn mock_oracle_eval_reports_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = advsamp(&["eval", "--mock-oracle", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read(&dir.path().join("eval.txt"));
    assert!(report.contains("rmse = 0"), "{report}");
    assert!(report.contains("max_abs_error = 0"), "{report}");
    for f in ["eval_grid.csv", "mean_energy.svg", "force_variance.svg", "ground_truth.svg"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn configuration_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for set in ["committee.members=1", "committee.no_such_key=3", "train.epochs=\"many\""] {
        let o = advsamp(&["run", "--out", out, "--set", set]);
        assert_eq!(o.status.code(), Some(2), "{set}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains("error [config]"), "{err}");
    }
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[committee]\nmembers = 1\n").unwrap();
    assert_eq!(advsamp(&["run", "--config", cfg.to_str().unwrap(), "--out", out]).status.code(), Some(2));
    assert_eq!(advsamp(&["--threads", "0", "run", "--out", out]).status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = advsamp(&["eval", "--committee", "/nonexistent/committee.committee", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn compare_writes_summary_and_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = advsamp(&with_small(vec!["--threads", "2", "compare", "--runs", "2", "--out", out], &["generations=2"]));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = read(&dir.path().join("summary.csv"));
    assert_eq!(summary.lines().count(), 1 + 2 * 2);
    let ratios = read(&dir.path().join("ratios.txt"));
    assert!(ratios.contains("rmse_ratio") && ratios.contains("energy_ratio"), "{ratios}");
    assert!(dir.path().join("summary.svg").exists());
    for s in ["adversarial", "random"] {
        for r in 0..2 {
            assert!(dir.path().join(s).join(format!("run_{r}")).join("records.csv").exists());
        }
    }
}

#[test]
fn train_then_attack_from_saved_committee() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let o = advsamp(&with_small(vec!["--threads", "1", "run", "--out", run.to_str().unwrap()], &["generations=1"]));
    assert!(o.status.success());
    let data = run.join("gen_1/dataset.csv");
    let trained = dir.path().join("train");
    let o = advsamp(&with_small(
        vec!["train", "--data", data.to_str().unwrap(), "--out", trained.to_str().unwrap()],
        &[],
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let committee = trained.join("committee.committee");
    assert!(committee.exists());
    let attacked = dir.path().join("attack");
    let o = advsamp(&with_small(
        vec![
            "attack",
            "--committee",
            committee.to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--out",
            attacked.to_str().unwrap(),
        ],
        &[],
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["attack_log.csv", "candidates.csv", "selection.csv", "selected.csv"] {
        assert!(attacked.join(f).exists(), "{f}");
    }
    let evaluated = dir.path().join("eval");
    let o = advsamp(&with_small(
        vec!["eval", "--committee", committee.to_str().unwrap(), "--out", evaluated.to_str().unwrap()],
        &[],
    ));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read(&evaluated.join("eval.txt")).starts_with("rmse = "));
}

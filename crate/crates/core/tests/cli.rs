use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use domainsift::cli::load_report;

const BIN: &str = env!("CARGO_BIN_EXE_domainsift");

const CONFIG: &str = r#"{
  "experiment": {
    "lm": {"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "context_len": 64},
    "base_train": {"epochs": 1},
    "pretrain_per_domain": 16,
    "pool_per_domain": 10,
    "reference_size": 8,
    "heldout_size": 6,
    "prefix_len": 3,
    "tune": {"epochs": 2},
    "downstream": {"epochs": 1},
    "ks": [5]
  },
  "ablation": {"taus": [0.9, 1.1], "prefix_lengths": [1, 2]}
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .args(["--config", "cfg.json"])
        .current_dir(dir)
        .env("DOMAINSIFT_LOG", "error")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const PIPELINE: &[&[&str]] = &[
    &["gen-data"],
    &["train-base"],
    &["tune-prefix"],
    &["score"],
    &["select"],
    &["baseline", "dsir"],
    &["baseline", "random"],
    &["evaluate"],
    &["ablate", "threshold"],
];

const OUTPUTS: &[&str] = &[
    "data/pool.jsonl",
    "out/base.lmds",
    "out/prefix.lmds",
    "out/tune_curve.jsonl",
    "out/scores.jsonl",
    "out/selected.jsonl",
    "out/baselines/dsir.jsonl",
    "out/baselines/random_selected.jsonl",
    "out/report.json",
    "out/report.csv",
    "out/ablations/threshold.txt",
];

fn pipeline(dir: &Path, extra: &[&str]) {
    fs::write(dir.join("cfg.json"), CONFIG).unwrap();
    for step in PIPELINE {
        let args: Vec<&str> = step.iter().chain(extra).copied().collect();
        ok(dir, &args);
    }
}

#[test]
fn end_to_end_and_byte_identical_rerun() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path(), &[]);
    pipeline(b.path(), &[]);
    for f in OUTPUTS {
        let x = fs::read(a.path().join(f)).unwrap_or_else(|e| panic!("{f}: {e}"));
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }

    // Every text output starts with a provenance line.
    for f in OUTPUTS.iter().filter(|f| !f.ends_with(".lmds")) {
        let text = fs::read_to_string(a.path().join(f)).unwrap();
        let first = text.lines().next().unwrap();
        let first = first.strip_prefix("# ").unwrap_or(first);
        let v: serde_json::Value = serde_json::from_str(first).unwrap();
        assert_eq!(v["_provenance"]["tool"], "domainsift", "{f}");
    }

    // The worker count changes nothing, not even the provenance line.
    let before = fs::read(a.path().join("out/scores.jsonl")).unwrap();
    ok(a.path(), &["score", "--workers", "3", "--force"]);
    assert!(before == fs::read(a.path().join("out/scores.jsonl")).unwrap());

    let report = load_report(&a.path().join("out/report.json")).unwrap();
    assert_eq!(report.forward_passes, 80);
    assert!(report.method("dsir").is_some());
}

#[test]
fn outputs_are_not_overwritten_without_force() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    ok(dir.path(), &["gen-data"]);
    let before = fs::read(dir.path().join("data/pool.jsonl")).unwrap();

    let out = run(dir.path(), &["gen-data", "--seed", "9"]);
    assert_eq!(out.status.code(), Some(7));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[output-exists]:"), "{err}");
    assert_eq!(fs::read(dir.path().join("data/pool.jsonl")).unwrap(), before);

    ok(dir.path(), &["gen-data", "--seed", "9", "--force"]);
    assert_ne!(fs::read(dir.path().join("data/pool.jsonl")).unwrap(), before);
}

#[test]
fn validation_reports_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"experiment": {"lm": {"n_heads": 3}, "selection": {"tau": 0}}}"#,
    )
    .unwrap();
    let out = run(dir.path(), &["score"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]:"), "{err}");
    for needle in ["n_heads", "tau", "paths.base_checkpoint", "paths.prefix_checkpoint", "paths.pool"] {
        assert!(err.contains(needle), "missing {needle}: {err}");
    }
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    let out = run(dir.path(), &["score", "--tau=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("tau"));
}

#[test]
fn unknown_config_fields_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), r#"{"experimnet": {}}"#).unwrap();
    let out = run(dir.path(), &["gen-data"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("experimnet"));
}

#[test]
fn bad_arguments_print_one_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN).args(["score", "--bogus"]).current_dir(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[argument]:"), "{err}");

    let out = Command::new(BIN).args(["gen-data"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("--config"));
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["gen-data"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[io]:"));
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    ok(dir.path(), &["gen-data"]);
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/base.lmds"), b"not a checkpoint").unwrap();
    let out = run(dir.path(), &["tune-prefix"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[checkpoint]:"));
    assert!(!dir.path().join("out/prefix.lmds").exists());
}

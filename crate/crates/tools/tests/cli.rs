use std::process::{Command, Output};

use sme_tools::report::Table;

fn sme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sme")).args(args).output().expect("spawn sme")
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(sme(&["--help"]).status.code(), Some(0));
    assert_eq!(sme(&[]).status.code(), Some(2));
    assert_eq!(sme(&["train", "--epochs", "3"]).status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = sme(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "flops"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn sensitivity_writes_table_config_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = sme(&["--out", out, "--plot", "sensitivity", "--sizes", "6,36", "--max-offset", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = Table::read(&dir.path().join("sensitivity.csv")).unwrap();
    assert_eq!(t.rows.len(), 2 * 4);
    assert!(dir.path().join("config.toml").exists());
    assert!(dir.path().join("summary.csv").exists());
    let svg = std::fs::read_to_string(dir.path().join("sensitivity.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
}

#[test]
fn eval_rejects_missing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.smec");
    let o = sme(&["--out", dir.path().to_str().unwrap(), "eval", "--checkpoint", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.smec"));
}

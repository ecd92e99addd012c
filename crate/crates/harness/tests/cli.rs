mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

fn glap(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_glap")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn evaluate_succeeds_and_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), common::SINE);
    let out = dir.path().join("out");
    let (code, stdout, stderr) = glap(&[
        "evaluate",
        "--config",
        &cfg,
        "--output-dir",
        out.to_str().unwrap(),
        "--seeds",
        "5",
        "--set",
        "sampler.samples=8",
    ]);
    assert_eq!(code, 0, "{stderr}");
    assert!(stdout.contains("train_rmse"), "{stdout}");
    assert!(out.join("results.json").exists());
    assert!(out.join("checkpoint_seed5.bin").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), common::SINE);
    assert_eq!(glap(&["train", "--config", &cfg, "--set", "sampler.bogus=1"]).0, 2);
    assert_eq!(glap(&["train", "--config", &cfg, "--set", "sampler.alpha=-1"]).0, 2);
    assert_ne!(glap(&["train", "--config", "/nonexistent/cfg.toml"]).0, 0);
    assert_eq!(glap(&["frobnicate"]).0, 2);
    assert_eq!(glap(&["--help"]).0, 0);
}

#[test]
fn divergence_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), common::SINE);
    let out = dir.path().join("out");
    let (code, _, stderr) = glap(&[
        "train",
        "--config",
        &cfg,
        "--output-dir",
        out.to_str().unwrap(),
        "--set",
        "train.optimizer=sgd",
        "--set",
        "train.lr=1e6",
    ]);
    assert_eq!(code, 3, "{stderr}");
    assert!(stderr.contains("diverged"), "{stderr}");
}

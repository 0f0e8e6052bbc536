//! End-to-end checks of the `bench` binary: argument handling, exit codes,
//! report destinations, and byte-level reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY_CONFIG: &str = r#"{
  "master_seed": 5,
  "n_environments": 1,
  "sample_sizes": [300],
  "learners": ["dm"]
}"#;

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_deterministic_reports() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), TINY_CONFIG);
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");

    for out in [&out_a, &out_b] {
        let output = bench(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
        assert!(
            output.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&output.stderr)
        );
    }
    let a = fs::read(&out_a).unwrap();
    let b = fs::read(&out_b).unwrap();
    assert!(!a.is_empty());
    assert_eq!(
        a, b,
        "same config and seed must reproduce the report byte for byte"
    );

    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("env_seed,n_samples,learner,normalized_reward"));
    assert!(text.contains(",dm,"));
}

#[test]
fn run_prints_report_to_stdout_by_default() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), TINY_CONFIG);
    let output = bench(&["run", "--config", &config]);
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.starts_with("env_seed,n_samples,learner,normalized_reward"));
}

#[test]
fn format_flag_overrides_config() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), TINY_CONFIG);
    let output = bench(&["run", "--config", &config, "--format", "markdown"]);
    assert!(output.status.success());
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.starts_with("# Benchmark report"));
    assert!(stdout.contains("| learner |"));
}

#[test]
fn malformed_config_exits_one() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), "{ this is not json");
    let output = bench(&["run", "--config", &config]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("invalid config"));
}

#[test]
fn unknown_learner_exits_one() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), r#"{"learners": ["astrology"]}"#);
    let output = bench(&["run", "--config", &config]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn missing_config_file_exits_one() {
    let output = bench(&["run", "--config", "/nonexistent/config.json"]);
    assert_eq!(output.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&output.stderr).contains("cannot read config"));
}

#[test]
fn unknown_flag_exits_one() {
    let output = bench(&["run", "--bogus"]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn help_exits_zero_and_names_the_subcommand() {
    let output = bench(&["--help"]);
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("run"));
}

mod common;

use std::path::Path;
use std::process::{Command, Output};

fn closer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_closer")).args(args).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    std::fs::write(&p, common::tiny_config().to_json_pretty().unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn validate_config_reports_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = closer(&["validate-config", "--config", &cfg]);
    assert!(o.status.success());
    assert!(text(&o).contains(&common::tiny_config().hash()));

    let o = closer(&["validate-config", "--preset", "closer", "--dump"]);
    assert!(o.status.success());
    let dumped = closer_core::experiment::ExperimentConfig::from_json(&text(&o)).unwrap();
    assert_eq!(dumped, closer_core::experiment::preset("closer").unwrap());
}

#[test]
fn invalid_inputs_fail_with_stage_message() {
    let o = closer(&["validate-config", "--preset", "bogus"]);
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error: config failed"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"name\": 3}").unwrap();
    let o = closer(&["run", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());

    let o = closer(&["export", "metrics", "--run", dir.path().join("none").to_str().unwrap(), "--out", "/tmp"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("export failed"));
}

#[test]
fn run_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("run");
    let o = closer(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(text(&o).contains("PD"));
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("# config_hash="));

    let exp = dir.path().join("exp");
    let o = closer(&["export", "histograms", "--run", out.to_str().unwrap(), "--out", exp.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        std::fs::read(exp.join("histogram.csv")).unwrap(),
        std::fs::read(out.join("histogram.csv")).unwrap()
    );

    let o = closer(&["run", "--config", &cfg, "--seed", "3", "--out", dir.path().join("other").to_str().unwrap()]);
    assert!(o.status.success());
    let other = std::fs::read_to_string(dir.path().join("other/metrics.csv")).unwrap();
    assert!(other.contains("master_seed=3"));
}

#[test]
fn run_without_output_directory_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = closer(&["run", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tandem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tandem"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

const SMALL: &str = "[experiment]\ntrials = 2\niterations = 3\n[optimizer]\nsamples = 40\n";

#[test]
fn experiment_writes_records_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    let out = tandem(dir.path(), &["experiment", "--config", "small.toml", "--out", "res"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let records = fs::read_to_string(dir.path().join("res/records.csv")).unwrap();
    let mut lines = records.lines();
    assert!(lines.next().unwrap().starts_with("trial,iteration,scheduled_T,realized_T,highconf_frac"));
    assert_eq!(lines.count(), 6);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("res/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["trials"], 2);
    assert!(dir.path().join("res/trial_0/schedule_0.json").exists());
}

#[test]
fn missing_config_fails_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = tandem(dir.path(), &["experiment", "--config", "nowhere.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.toml"));
}

#[test]
fn unknown_subcommand_and_bad_config_fail() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!tandem(dir.path(), &["launch"]).status.success());
    fs::write(dir.path().join("bad.toml"), "[experiment]\nerror_rate = 0.7\n").unwrap();
    let out = tandem(dir.path(), &["schedule", "--config", "bad.toml"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error_rate"));
}

#[test]
fn all_low_confidence_schedules_serially() {
    let dir = tempfile::tempdir().unwrap();
    // No step can reach this certainty, so every step is low confidence.
    let cfg = "[confidence]\nmu_c = 1e-9\ngamma_c = 0.9999999\n[optimizer]\nsamples = 40\n";
    fs::write(dir.path().join("low.toml"), cfg).unwrap();
    let out = tandem(dir.path(), &["schedule", "--config", "low.toml", "--out", "."]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("schedule.json")).unwrap()).unwrap();
    let step = report["step"].as_f64().unwrap();
    let length: f64 = report["gradients_1"].as_array().unwrap().iter().map(|g| g.as_f64().unwrap() * step).sum();
    let tau = report["tau"].as_f64().unwrap();
    assert!((tau - length).abs() <= 1e-9 * length, "tau {tau}, agent-1 length {length}");
}

#[test]
fn same_seed_gives_identical_records() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    for o in ["a", "b"] {
        assert!(tandem(dir.path(), &["experiment", "--config", "small.toml", "--seed", "7", "--out", o])
            .status
            .success());
    }
    let a = fs::read(dir.path().join("a/records.csv")).unwrap();
    let b = fs::read(dir.path().join("b/records.csv")).unwrap();
    assert_eq!(a, b);
}

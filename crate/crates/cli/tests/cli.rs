use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ssmlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ssmlab"))
        .args(args)
        .env_remove("SSMLAB_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn out_dir(dir: &Path) -> &str {
    dir.to_str().unwrap()
}

#[test]
fn gradcheck_succeeds_and_writes_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = ssmlab(&["gradcheck", "--n", "4", "--d", "8", "--L", "32", "--trials", "100", "--out", out_dir(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 300);
    let worst = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-5);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "gradcheck");
    assert_eq!(manifest["config"]["trials"], 100);
    assert_eq!(manifest["files"]["gradcheck.csv"].as_str().unwrap().len(), 64);
    assert!(manifest["wall_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn uat_demo_reports_collisions() {
    let dir = tempfile::tempdir().unwrap();
    let o = ssmlab(&["uat-demo", "--seed", "7", "--out", out_dir(dir.path())]);
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("collision.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "out_diff").unwrap();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[0][0], "7");
    assert!(rows.iter().all(|r| r[col].parse::<f64>().unwrap() <= 1e-10));
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = ssmlab(&["gradcheck", "--config", missing.to_str().unwrap(), "--out", out_dir(dir.path())]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nope.json"), "{err}");
}

#[test]
fn invalid_config_values_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    fs::write(&cfg, r#"{"train": {"lr_main": 1e-4, "lr_delta": 1e-2}, "task": {"generator": "wavesum", "n_samples": 20, "L": 8}, "n_test": 4}"#).unwrap();
    let o = ssmlab(&["train", "--config", cfg.to_str().unwrap(), "--out", out_dir(&dir.path().join("o"))]);
    assert_eq!(code(&o), 2);
    fs::write(&cfg, "[1, 2]").unwrap();
    let o = ssmlab(&["uat-demo", "--config", cfg.to_str().unwrap(), "--out", out_dir(&dir.path().join("p"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_subcommand_prints_usage() {
    let o = ssmlab(&["frobnicate"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn existing_manifest_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["uat-demo", "--trials", "2", "--out", out_dir(dir.path())];
    assert_eq!(code(&ssmlab(&args)), 0);
    assert_eq!(code(&ssmlab(&args)), 2);
    let mut forced = args.to_vec();
    forced.push("--force");
    assert_eq!(code(&ssmlab(&forced)), 0);
}

#[test]
fn identical_runs_give_identical_files() {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let cfg = runs[0].path().join("run.json");
    fs::write(
        &cfg,
        r#"{"seed": 3, "trials": 5, "c_grid": [10, 100, 1000], "l": 40}"#,
    )
    .unwrap();
    for dir in &runs {
        let o = ssmlab(&["stability-c", "--config", cfg.to_str().unwrap(), "--workers", "1", "--out", out_dir(&dir.path().join("o"))]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["stability_c.csv", "stability_c.fit.csv"] {
        let a = fs::read(runs[0].path().join("o").join(name)).unwrap();
        let b = fs::read(runs[1].path().join("o").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(runs[0].path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 3);
    assert_eq!(m["config"]["trials"], 5);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.json");
    fs::write(
        &cfg,
        r#"{"task": {"generator": "linear_combination", "n_samples": 40, "L": 6}, "n_test": 8,
            "arch": {"unit": "s4d", "d": 4, "n": 2}, "train": {"epochs": 5, "batch_size": 8}}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = ssmlab(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "2", "--unit", "S6", "--out", out_dir(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 2 * 4);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["arch"]["unit"], "s6");
    assert_eq!(m["config"]["train"]["epochs"], 2);
    assert!(out.join("model.json").exists());
}

#[test]
fn seed_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ssmlab"))
        .args(["uat-demo", "--trials", "1", "--out", out_dir(dir.path())])
        .env("SSMLAB_SEED", "11")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let csv = fs::read_to_string(dir.path().join("collision.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().starts_with("11,"));
}

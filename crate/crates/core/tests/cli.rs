use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const CELL: &str = r#"{"kernel": {"family": "shifted_gaussian", "sigma": 0.2, "shift": [0.3]},
  "mu": {"family": "trig_product", "amplitude": 0.5}, "grid": {"dim": 1, "n": 64}}"#;

fn run(dir: &Path, study: &str, config: &str, extra_env: &[(&str, &str)]) -> Output {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nlhomog"));
    cmd.arg(study).arg("--config").arg(&cfg).arg("--out").arg(dir.join("out"));
    cmd.env_remove("NLHOMOG_THREADS");
    for (k, v) in extra_env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn cell_study_succeeds_and_records_manifest() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), "cell", CELL, &[("NLHOMOG_THREADS", "2")]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_json(&dir.path().join("out/manifest.json"));
    assert_eq!(manifest["study"], "cell");
    assert_eq!(manifest["threads"], 2);
    assert_eq!(manifest["config"]["grid"]["n"], 64);
    let sol = read_json(&dir.path().join("out/cell_solution.json"));
    assert!(sol["b"][0].as_f64().unwrap() > 0.0);
    assert!(sol["theta"][0].as_f64().unwrap() > 0.0);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert!(run(a.path(), "cell", CELL, &[("NLHOMOG_THREADS", "1")]).status.success());
    assert!(run(b.path(), "cell", CELL, &[("NLHOMOG_THREADS", "3")]).status.success());
    let read = |d: &TempDir| fs::read(d.path().join("out/cell_solution.json")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn invalid_configurations_exit_with_code_two() {
    let cases = [
        r#"{"grid": {"dim": 1, "n": 64}}"#,
        r#"{"kernel": {"family": "gaussian", "sigma": 0.2}, "colour": 1}"#,
        r#"{"study": "einstein", "kernel": {"family": "gaussian", "sigma": 0.2}}"#,
        "not json",
    ];
    for config in cases {
        let dir = TempDir::new().unwrap();
        let out = run(dir.path(), "cell", config, &[]);
        assert_eq!(out.status.code(), Some(2), "{config}");
        assert!(!dir.path().join("out").exists());
    }
}

#[test]
fn invalid_thread_count_exits_with_code_two() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), "cell", CELL, &[("NLHOMOG_THREADS", "zero")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unsupported_storage_mode_is_a_capability_error() {
    let dir = TempDir::new().unwrap();
    let config = r#"{"kernel": {"family": "gaussian", "sigma": 0.2},
      "mu": {"family": "trig_product", "amplitude": 0.5},
      "grid": {"dim": 1, "n": 32}, "assembly": {"storage": "matrix_free"}}"#;
    assert_eq!(run(dir.path(), "cell", config, &[]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_code_three_and_reports() {
    let dir = TempDir::new().unwrap();
    let config = r#"{"kernel": {"family": "shifted_gaussian", "sigma": 0.2, "shift": [0.3]},
      "mu": {"family": "trig_product", "amplitude": 0.5}, "grid": {"dim": 1, "n": 64},
      "tolerances": {"max_ground_state_iter": 1}}"#;
    let out = run(dir.path(), "cell", config, &[]);
    assert_eq!(out.status.code(), Some(3));
    let failure = read_json(&dir.path().join("out/failure.json"));
    assert_eq!(failure["exit_code"], 3);
    assert_eq!(failure["study"], "cell");
}

#[test]
fn evolve_study_writes_a_monotone_ladder() {
    let dir = TempDir::new().unwrap();
    let config = r#"{"kernel": {"family": "shifted_gaussian", "sigma": 0.2, "shift": [0.3]},
      "mu": {"family": "trig_product", "amplitude": 0.5}, "grid": {"dim": 1, "n": 16},
      "evolution": {"epsilons": [0.125, 0.0625], "horizon": 0.1, "n_cell": 16}}"#;
    let out = run(dir.path(), "evolve", config, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("out/evolve_summary.json"));
    assert_eq!(summary["monotone"], true);
    let csv = fs::read_to_string(dir.path().join("out/evolve_eps16.csv")).unwrap();
    assert!(csv.starts_with("t,l2_error,weighted_mass,weighted_energy"));
    assert_eq!(csv.lines().count(), 34);
}

#[test]
fn oracle_and_einstein_studies_succeed() {
    let dir = TempDir::new().unwrap();
    assert_eq!(run(dir.path(), "oracle", CELL, &[]).status.code(), Some(0));
    let report = read_json(&dir.path().join("out/oracle_report.json"));
    assert!(report["v0"].as_f64().unwrap() < 1e-8);

    let dir = TempDir::new().unwrap();
    let config = r#"{"kernel": {"family": "gaussian", "sigma": 0.2},
      "mu": {"family": "trig_product", "amplitude": 0.5}, "grid": {"dim": 1, "n": 32}}"#;
    assert_eq!(run(dir.path(), "einstein", config, &[]).status.code(), Some(0));
    assert!(dir.path().join("out/einstein_jacobians.csv").exists());
}

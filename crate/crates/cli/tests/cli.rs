use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(command: &str, config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dampwave"))
        .args([command, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn constant_damping_has_no_band_outliers_beyond_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("bands", &configs().join("constant.json"), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&dir.path().join("bands.json"));
    assert_eq!(report["N"], 32);
    assert_eq!(report["epsilon"], 0.1);
    assert_eq!(report["config_hash"].as_str().unwrap().len(), 64);
    let windows = report["result"]["bands"]["windows"].as_array().unwrap();
    assert!(!windows.is_empty());
    for w in windows.iter().filter(|w| w["re_min"].as_f64().unwrap() >= 1.0) {
        assert_eq!(w["outliers_above"], 0);
        assert_eq!(w["outliers_below"], 0);
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("re_min"));
}

#[test]
fn undamped_weyl_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("weyl", &configs().join("undamped.json"), dir.path());
    assert_eq!(out.status.code(), Some(0));
    let r = &read_json(&dir.path().join("weyl.json"))["result"];
    assert_eq!(r["count"], 201);
    assert_eq!(r["prediction"], 200.0);
    assert!((r["ratio"].as_f64().unwrap() - 1.005).abs() < 1e-12);
}

#[test]
fn missing_config_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.json");
    let out = run("spectrum", &missing, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.json"));
}

#[test]
fn malformed_config_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"damping": {"generator": {"n": 1, "K": 1, "amplitude": 0.5, "seed": 1}}, "solver": {"N": -3}}"#);
    let out = run("spectrum", &cfg, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("solver.N"));
}

#[test]
fn oversized_problem_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"damping": {"generator": {"n": 2, "K": 1, "amplitude": 0.5, "seed": 1}}, "solver": {"N": 4000}}"#);
    let out = run("spectrum", &cfg, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds the dense cap"));
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        assert_eq!(run("spectrum", &configs().join("constant.json"), dir.path()).status.code(), Some(0));
        assert_eq!(run("lyapunov", &configs().join("constant.json"), dir.path()).status.code(), Some(0));
    }
    for name in ["eigenvalues.csv", "spectrum.json", "lyapunov.json"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let csv = std::fs::read_to_string(a.path().join("eigenvalues.csv")).unwrap();
    assert!(csv.starts_with("re_tau,im_tau\n"));
}

#[test]
fn psd_decay_is_monotone() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("decay", &configs().join("psd.json"), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let r = &read_json(&dir.path().join("decay.json"))["result"];
    assert_eq!(r["psd"], true);
    assert_eq!(r["monotone"], true);
    assert!(r["balance_residual"].as_f64().unwrap() < 1e-5);
    let csv = std::fs::read_to_string(dir.path().join("decay_energy.csv")).unwrap();
    assert!(csv.starts_with("t,energy\n"));
}

#[test]
fn quantize_check_passes_on_a_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"quantize": {"L": 4.0, "points": 321, "h": 0.05, "xi_max": 3.0}}"#);
    let out = run("quantize-check", &cfg, dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let r = &read_json(&dir.path().join("quantize_check.json"))["result"];
    assert_eq!(r["positivity_ok"], true);
    assert_eq!(r["symbols"].as_array().unwrap().len(), 6);
}

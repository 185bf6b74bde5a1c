use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use serde_json::Value;

fn etel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etel")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> Value {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

fn write_data(dir: &Path, name: &str, values: &[f64]) -> PathBuf {
    let path = dir.join(name);
    let body: String = std::iter::once("x".to_string())
        .chain(values.iter().map(|v| format!("{v:.17e}")))
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&path, body + "\n").unwrap();
    path
}

fn normal_data(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let mut rng = StdRng::seed_from_u64(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    write_data(dir, "data.csv", &x)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn estimate_reports_converged_etel() {
    let dir = tempfile::tempdir().unwrap();
    let data = normal_data(dir.path(), 200, 1);
    let v = stdout_json(&etel(&["estimate", "--data", s(&data), "--method", "etel"]));
    assert_eq!(v["method"], "ETEL");
    assert_eq!(v["converged"], true);
    assert!(v["theta_hat"][0].as_f64().unwrap().abs() < 0.3);
    assert_eq!(v["t"].as_array().unwrap().len(), 2);
}

#[test]
fn estimate_writes_output_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let data = normal_data(dir.path(), 100, 2);
    let out = dir.path().join("est.json");
    let o = etel(&["estimate", "--data", s(&data), "--method", "el", "--out", s(&out)]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let body: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(body["method"], "EL");
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("est.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "estimate");
    assert!(manifest["wall_clock_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn estimate_usage_and_numerical_errors() {
    assert_eq!(code(&etel(&["estimate", "--method", "etel"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let data = normal_data(dir.path(), 50, 3);
    assert_eq!(code(&etel(&["estimate", "--data", s(&data), "--method", "etel", "--delta", "0"])), 2);
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&etel(&["estimate", "--data", s(&missing), "--method", "etel"])), 2);
    let constant = write_data(dir.path(), "const.csv", &[0.5; 20]);
    let o = etel(&["estimate", "--data", s(&constant), "--method", "etel"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("SingularMoments"));
}

#[test]
fn test_at_estimate_is_zero_and_not_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = normal_data(dir.path(), 150, 4);
    let est = stdout_json(&etel(&["estimate", "--data", s(&data), "--method", "etel"]));
    let theta_hat = est["theta_hat"][0].as_f64().unwrap().to_string();
    let v =
        stdout_json(&etel(&["test", "--data", s(&data), "--theta0", &theta_hat, "--family", "t", "--lambda", "-1"]));
    assert!(v["statistic"].as_f64().unwrap().abs() < 1e-8);
    assert_eq!(v["reject"], false);
    assert!(v["p_value"].as_f64().unwrap() > 0.99);
}

#[test]
fn g2_matches_t_with_lambda_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = normal_data(dir.path(), 120, 5);
    let g2 = stdout_json(&etel(&["test", "--data", s(&data), "--theta0", "0.1", "--family", "g2"]));
    let t0 = stdout_json(&etel(&["test", "--data", s(&data), "--theta0", "0.1", "--family", "t", "--lambda", "0"]));
    let (a, b) = (g2["statistic"].as_f64().unwrap(), t0["statistic"].as_f64().unwrap());
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    assert_eq!(g2["family"], "G2");
}

#[test]
fn test_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = normal_data(dir.path(), 80, 6);
    assert_eq!(code(&etel(&["test", "--data", s(&data), "--theta0", "0", "--family", "t", "--alpha", "1.5"])), 2);
    assert_eq!(code(&etel(&["test", "--data", s(&data), "--theta0", "0", "--family", "q"])), 2);
    let o = etel(&["test", "--data", s(&data), "--theta0", "5", "--family", "s"]);
    assert_eq!(code(&o), 4, "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn csv_rows(out: &Output) -> (String, Vec<Vec<String>>) {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    (header, lines.map(|l| l.split(',').map(str::to_string).collect()).collect())
}

#[test]
fn closed_form_power() {
    let o = etel(&["power", "--theta0", "0", "--theta-star", "0,1", "--lambda", "-1", "--n", "100", "--closed-form"]);
    let (header, rows) = csv_rows(&o);
    assert_eq!(header, "theta_star,mu,nu,beta_star,method");
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[4] == "closed_form"));
    let mu0: f64 = rows[0][1].parse().unwrap();
    let beta0: f64 = rows[0][3].parse().unwrap();
    assert_eq!(mu0, 0.0);
    assert!((beta0 - 0.05).abs() < 1e-12);
    let mu1: f64 = rows[1][1].parse().unwrap();
    assert!((mu1 - 0.34657).abs() < 1e-4, "{mu1}");
}

#[test]
fn plugin_power_rows_and_digits() {
    let o = etel(&[
        "power",
        "--theta0",
        "0",
        "--theta-star",
        "0:0.2:0.1",
        "--lambda",
        "0",
        "--n",
        "100",
        "--plugin-samples",
        "20000",
    ]);
    let (_, rows) = csv_rows(&o);
    assert!(rows.iter().any(|r| r[4] == "plugin"));
    for r in &rows {
        let mantissa = r[3].split('e').next().unwrap().replace(['-', '.'], "");
        assert_eq!(mantissa.len(), 17, "{}", r[3]);
        let beta: f64 = r[3].parse().unwrap();
        assert!((0.0..=1.0).contains(&beta));
    }
}

#[test]
fn power_usage_errors() {
    assert_eq!(code(&etel(&["power", "--theta0", "0", "--theta-star", "0:1", "--lambda", "0", "--n", "100"])), 2);
    assert_eq!(code(&etel(&["power", "--theta0", "0", "--theta-star", "a,b", "--lambda", "0", "--n", "100"])), 2);
    assert_eq!(
        code(&etel(&["power", "--theta0", "0.5", "--theta-star", "0", "--lambda", "0", "--n", "100", "--closed-form"])),
        2
    );
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, body).unwrap();
    path
}

const SMALL_CONFIG: &str = r#"{"delta": 1.0, "theta_true": 0.0, "theta0": 0.0, "n": 60, "R": 10,
    "lambdas": [-1, 0], "estimators": ["ETEL"], "families": ["T", "S", "G2"], "master_seed": 3}"#;

#[test]
fn simulate_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&etel(&["simulate", "--config", s(&config), "--out-dir", s(&a)])), 0);
    assert_eq!(code(&etel(&["simulate", "--config", s(&config), "--out-dir", s(&b), "--sequential"])), 0);
    for name in ["sizes.csv", "cdf.csv", "estimator_cdf.csv"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    let sizes = std::fs::read_to_string(a.join("sizes.csv")).unwrap();
    assert!(sizes.starts_with("family,lambda,estimator,size,failures\n"));
    assert_eq!(sizes.lines().count(), 1 + 5);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(a.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["replications"], 10);
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 3);
    assert_eq!(manifest["command"], "simulate");
}

#[test]
fn simulate_power_curve() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL_CONFIG);
    let out = dir.path().join("p");
    let o = etel(&[
        "simulate",
        "--config",
        s(&config),
        "--out-dir",
        s(&out),
        "--theta-star",
        "0.3",
        "--plugin-samples",
        "2000",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("power_curve.csv").exists());
}

#[test]
fn simulate_rejects_bad_config_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &SMALL_CONFIG.replace("\"R\"", "\"reps\""));
    let out = dir.path().join("out");
    assert_eq!(code(&etel(&["simulate", "--config", s(&config), "--out-dir", s(&out)])), 2);
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());
    let bad_alpha = write_config(dir.path(), &SMALL_CONFIG.replace("\"master_seed\"", "\"alpha\": 0, \"master_seed\""));
    assert_eq!(code(&etel(&["simulate", "--config", s(&bad_alpha), "--out-dir", s(&out)])), 2);
    assert_eq!(code(&etel(&["simulate", "--config", s(&config), "--out-dir", s(&out), "--threads", "0"])), 2);
}

#[test]
fn influence_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = normal_data(dir.path(), 200, 7);
    let v = stdout_json(&etel(&["influence", "--data", s(&data), "--theta0", "0", "--x", "1.5"]));
    assert!(v["if2"].as_f64().unwrap() >= 0.0);
    for m in ["EL", "ET", "ETEL"] {
        assert!(v["rho"][m].is_array() || v["rho"][m].is_null(), "{m}");
    }
    assert_eq!(v["g"].as_array().unwrap().len(), 2);
}

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gradeig(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradeig")).args(args).output().unwrap()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn summary(dir: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(dir.join("sweep_summary.csv")).unwrap();
    rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn quartic_solve_with_check() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("q");
    let o = gradeig(&["solve", "--problem", "quartic1d", "--h", "2e-3", "--check", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    let lambda = m["lambda_star"].as_f64().unwrap();
    let oracle = m["oracle"]["lambda_oracle"].as_f64().unwrap();
    assert!((lambda - oracle).abs() <= 5e-3);
    assert!((oracle - 1.5f64.powf(2.0 / 3.0)).abs() < 1e-8);
    assert!(m["oracle"]["note"].as_str().unwrap().contains("0.7631"));
    assert_eq!(m["format_version"], 1);
    assert!(m["seed"].is_u64());
    assert!(m["eigen"]["delta_trace"].as_array().unwrap().len() >= 2);
    assert!(m["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    let csv = std::fs::read_to_string(out.join("u_star.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "x0,value");
    assert_eq!(csv.lines().count(), 3002);
}

#[test]
fn degenerate_path() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("d");
    let o = gradeig(&["solve", "--problem", "degenerate_zeroF", "--h", "0.01", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let m = manifest(&out);
    let grid: gradeig::Grid = serde_json::from_value(m["grid"].clone()).unwrap();
    let spec = gradeig::builtin("degenerate_zeroF").unwrap();
    let min_f = (0..grid.len()).map(|i| spec.cost().eval(&grid.point(i))).fold(f64::INFINITY, f64::min);
    assert_eq!(m["lambda_star"].as_f64().unwrap(), min_f);
    assert!(m["eigen"]["delta_trace"].as_array().unwrap().is_empty());
}

#[test]
fn malformed_config_exits_2_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.json", "{\n  \"problem\": \"quartic1d\",\n  \"grid\": {\"hh\": 1}\n}");
    let o = gradeig(&["solve", "--config", &cfg, "--out", tmp.path().join("b").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("hh") && err.contains("line 3"), "{err}");
    let cfg = write(tmp.path(), "trunc.json", "{\"problem\": ");
    assert_eq!(gradeig(&["solve", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn validation_failure_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "flat.json",
        r#"{"inline": {"name": "flat", "operator": {"kind": "laplacian", "dim": 1},
            "constraint": {"kind": "ball", "dim": 1, "radius": 1.0},
            "cost": {"kind": "quad_form", "q": [[0.0]]}}}"#,
    );
    let out = tmp.path().join("v");
    let o = gradeig(&["validate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let m = manifest(&out);
    assert_eq!(m["exit_code"], 2);
    assert!(m["validation"]["checks"].as_array().unwrap().iter().any(|c| c["passed"] == false));
    let both = write(tmp.path(), "both.json", r#"{"problem": "quartic1d", "inline": {"name": "x",
        "operator": {"kind": "zero", "dim": 1}, "constraint": {"kind": "ball", "dim": 1, "radius": 1.0},
        "cost": {"kind": "quadratic", "dim": 1}}}"#);
    assert_eq!(gradeig(&["validate", "--config", &both, "--out", out.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn solver_failure_exits_3_and_check_failure_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c3.json", r#"{"problem": "quartic1d", "solver": {"max_newton": 1}, "grid": {"h": 0.01}}"#);
    let out = tmp.path().join("c3");
    assert_eq!(gradeig(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(3));
    assert!(manifest(&out)["error"].is_string());

    let cfg = write(tmp.path(), "c4.json", r#"{"problem": "quartic1d", "check_tolerance": 1e-9, "grid": {"h": 0.01}}"#);
    let out = tmp.path().join("c4");
    assert_eq!(gradeig(&["solve", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(gradeig(&["solve", "--config", &cfg, "--check", "--out", out.to_str().unwrap()]).status.code(), Some(4));
}

#[test]
fn flags_override_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.json", r#"{"problem": "radial2d", "grid": {"h": 0.5}, "certify": {"tau": 1.2}}"#);
    let out = tmp.path().join("o");
    let o = gradeig(&["validate", "--config", &cfg, "--problem", "quartic1d", "--h", "0.01", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let m = manifest(&out);
    assert_eq!(m["problem"], "quartic1d");
    assert_eq!(m["config"]["grid"]["h"], 0.01);
    assert_eq!(m["config"]["certify"]["tau"], 1.2);
    assert_eq!(m["config"]["solver"]["tol_lambda"], 1e-3);
}

#[test]
fn small_box_is_expanded_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("e");
    let o = gradeig(&["solve", "--problem", "quartic1d", "--half", "1", "--h", "0.01", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let m = manifest(&out);
    assert!(m["warnings"].as_array().unwrap().iter().any(|w| w.as_str().unwrap().contains("expanded")));
    let grid: gradeig::Grid = serde_json::from_value(m["grid"].clone()).unwrap();
    assert!(grid.contains_ball(2.4 - 1e-9));
}

#[test]
fn manifests_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let strip = |dir: &Path| {
        let mut m = manifest(dir);
        m.as_object_mut().unwrap().remove("timings");
        m["config"].as_object_mut().unwrap().remove("output");
        m
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = gradeig(&["certify", "--problem", "radial2d", "--h", "0.1", "--out", d.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
    }
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(std::fs::read(a.join("u_star.csv")).unwrap(), std::fs::read(b.join("u_star.csv")).unwrap());
}

#[test]
fn oracle_verb() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = gradeig(&["oracle", "--problem", "separable2d", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let m = manifest(&out);
    assert!((m["oracle"]["lambda_oracle"].as_f64().unwrap() - 2.0 * 1.5f64.powf(2.0 / 3.0)).abs() < 1e-8);
    let phi = std::fs::read_to_string(out.join("phi.csv")).unwrap();
    assert_eq!(phi.lines().next().unwrap(), "r,phi_prime");
    assert_eq!(phi.lines().count(), 1002);
    assert_eq!(gradeig(&["oracle", "--problem", "ellipse2d", "--out", out.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn h_sweep_converges() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = gradeig(&["sweep", "--problem", "quartic1d", "--axis", "h", "--values", "0.02,0.01,0.005", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let rows = summary(&out);
    assert_eq!(rows.len(), 3);
    let lambdas: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    let oracle = 1.5f64.powf(2.0 / 3.0);
    assert!(lambdas.windows(2).all(|w| w[1] < w[0]), "{lambdas:?}");
    assert!(lambdas.iter().all(|l| (l - oracle).abs() <= 5e-3), "{lambdas:?}");
    for k in 0..3 {
        assert!(out.join(format!("h_{k:03}")).join("manifest.json").exists());
    }
}

#[test]
fn tau_sweep_trend_and_empty_values() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let o = gradeig(&["sweep", "--problem", "quartic1d", "--h", "0.01", "--axis", "tau", "--values", "1.01,1.05,1.1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let plus: Vec<f64> = summary(&out).iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(plus.windows(2).all(|w| w[1] >= w[0]), "{plus:?}");
    let o = gradeig(&["sweep", "--problem", "quartic1d", "--axis", "tau", "--values", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

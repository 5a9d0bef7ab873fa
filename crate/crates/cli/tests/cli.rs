use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn twowell(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_twowell"))
        .args(args)
        .env("TWOWELL_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

#[test]
fn wells_connect_default_pair() {
    let v = json(&twowell(&["wells", "connect", "--lambda", "0.5"]));
    let angles: Vec<f64> = v["angles"].as_array().unwrap().iter().map(|a| a.as_f64().unwrap()).collect();
    assert_eq!(angles.len(), 2);
    assert!((angles[0] - 0.8f64.acos()).abs() < 1e-12);
    assert!((angles[1] + 0.8f64.acos()).abs() < 1e-12);
}

#[test]
fn hull_test_identity() {
    let v = json(&twowell(&["hull", "test", "--matrix", "1,0,0,1", "--lambda", "0.5"]));
    assert_eq!(v["in_K"], true);
    assert_eq!(v["in_Zmin"], true);
    assert_eq!(v["in_Kc"], true);
    assert_eq!(v["x"], serde_json::json!([1.0, 0.0]));
    assert_eq!(v["y"], serde_json::json!([0.0, 0.0]));
}

#[test]
fn hull_sweep_csv_and_decompose() {
    let out = twowell(&["hull", "sweep", "--steps", "3"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("alpha,gamma,t,m11,m12,m21,m22\n"));
    assert!(text.lines().count() > 3);

    let v = json(&twowell(&["hull", "decompose", "--matrix", "0.7,-0.6,0.15,1.3"]));
    assert!((v["zeta"].as_f64().unwrap() - 0.5).abs() < 1e-9);
    assert_eq!(v["children"].as_array().unwrap().len(), 2);
}

#[test]
fn so3scan_finds_connection() {
    let v = json(&twowell(&["so3scan", "--diag", "0.5,1,2", "--samples", "20000"]));
    assert!(v["min_residual"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn laminate_build_certify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let field = p(dir.path(), "field.json");
    let svg = p(dir.path(), "field.svg");
    let args = [
        "laminate", "build", "--target", "mid", "--freq", "8", "--cutoff", "0.125", "--field", &field, "--svg", &svg,
    ];
    let first = twowell(&args);
    let stats = json(&first);
    assert_eq!(stats["nx"], 8);
    assert_eq!(stats["ny"], 16);
    assert_eq!(stats["stats"]["boundary_error"], 0.0);
    assert!(fs::read_to_string(&svg).unwrap().contains("viewBox=\"0 0 800 800\""));
    let field_bytes = fs::read(&field).unwrap();

    let second = twowell(&args);
    assert_eq!(first.stdout, second.stdout);
    assert_eq!(fs::read(&field).unwrap(), field_bytes);

    let cert = json(&twowell(&["certify", "--field", &field]));
    assert_eq!(cert["certified"], false);
    assert!(cert["reasons"]
        .as_array()
        .unwrap()
        .iter()
        .any(|r| r == "gradients populate 2 cosets"));
    assert!(cert["null_lagrangian_residual"].as_f64().unwrap() < 1e-10);
}

#[test]
fn minimize_writes_report_trace_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = p(dir.path(), "run.json");
    fs::write(
        &config,
        r#"{"nx": 4, "ny": 4, "model": {"kind": "dirichlet"}, "R": [1, 0, 0, 1],
            "init": {"kind": "perturbed", "amplitude": 0.05, "seed": 11},
            "max_iters": 3000}"#,
    )
    .unwrap();
    let (report, trace, field) = (p(dir.path(), "report.json"), p(dir.path(), "trace.csv"), p(dir.path(), "out.json"));
    let run = || {
        let out = twowell(&[
            "minimize", "--config", &config, "--out", &report, "--trace", &trace, "--field", &field,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(out.stdout.is_empty());
        (fs::read(&report).unwrap(), fs::read(&trace).unwrap())
    };
    let first = run();
    assert_eq!(run(), first);
    let v: Value = serde_json::from_slice(&first.0).unwrap();
    assert!((v["energy"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert_eq!(v["monotone"], true);
    assert!(String::from_utf8(first.1).unwrap().starts_with("iter,energy,penalty_residual,step_size"));

    let cert = json(&twowell(&["certify", "--field", &field, "--coset-tol", "1e-4", "--affine-tol", "1e-4"]));
    assert_eq!(cert["certified"], true);
}

#[test]
fn envelope_build_query_slice() {
    let dir = tempfile::tempdir().unwrap();
    let env = p(dir.path(), "env.bin");
    let summary = json(&twowell(&["envelope", "build", "--resolution", "9", "--box", "3", "--envelope", &env]));
    assert_eq!(summary["nodes"], 9 * 9 * 9 * 9);
    assert!(summary["min_second_difference"].as_f64().unwrap() >= -1e-9);
    let q = json(&twowell(&["envelope", "query", "--envelope", &env, "--matrix", "2,0,0,2"]));
    assert!(q["value"].as_f64().unwrap() > 1.0);
    let out = twowell(&["envelope", "slice", "--envelope", &env, "--axes", "0,3"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 1 + 81);
    let out = twowell(&["envelope", "query", "--envelope", &env, "--matrix", "9,0,0,1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes() {
    assert_eq!(twowell(&["hull", "test", "--matrix", "1,2"]).status.code(), Some(2));
    assert_eq!(twowell(&["wells", "connect", "--lambda", "1.5"]).status.code(), Some(2));
    assert_eq!(twowell(&["nonsense"]).status.code(), Some(2));
    assert_eq!(twowell(&["laminate", "build", "--freq", "4", "--cutoff", "0.2"]).status.code(), Some(2));

    let dir = tempfile::tempdir().unwrap();
    let config = p(dir.path(), "huge.json");
    fs::write(
        &config,
        r#"{"nx": 2, "ny": 2, "model": {"kind": "dirichlet"}, "R": [1e200, 0, 0, 1e200],
            "init": {"kind": "affine"}}"#,
    )
    .unwrap();
    assert_eq!(twowell(&["minimize", "--config", &config]).status.code(), Some(3));
    let bad = p(dir.path(), "bad.json");
    fs::write(&bad, r#"{"nx": 2}"#).unwrap();
    assert_eq!(twowell(&["minimize", "--config", &bad]).status.code(), Some(2));
}

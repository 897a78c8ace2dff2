use std::path::Path;
use std::process::{Command, Output};

use kbco_harness::output::read_trace_csv;

fn kbco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kbco"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_1d(out: &Path, seeds: &str) -> Output {
    kbco(&[
        "run",
        "--algo",
        "kernel1d",
        "--env",
        "abs",
        "--n",
        "1",
        "--t",
        "1e3",
        "--seeds",
        seeds,
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn empty_seed_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_1d(dir.path(), "5..1");
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn kernel1d_on_needs_one_dimension() {
    let out = kbco(&["run", "--algo", "kernel1d", "--n", "2", "--t", "10"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn one_d_run_writes_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_1d(dir.path(), "7");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("trace_seed7.csv")).unwrap();
    assert_eq!(text.lines().count(), 1001);
    assert!(text.starts_with("t,x1,in_K,in_Omega,loss,u,eta,focus_cut,restart\n"));
    let trace = read_trace_csv(text.as_bytes()).unwrap();
    assert!(trace.records.iter().enumerate().all(|(i, r)| r.t == i + 1));
    assert!(dir.path().join("summary.json").exists());
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["runs"][0]["rounds"], 1000);
}

#[test]
fn same_seed_gives_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    assert!(run_1d(a.path(), "1,2").status.success());
    assert!(run_1d(b.path(), "1,2").status.success());
    for seed in [1, 2] {
        let name = format!("trace_seed{seed}.csv");
        let x = std::fs::read(a.path().join(&name)).unwrap();
        let y = std::fs::read(b.path().join(&name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn different_seeds_differ() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_1d(dir.path(), "1..2").status.success());
    let x = std::fs::read(dir.path().join("trace_seed1.csv")).unwrap();
    let y = std::fs::read(dir.path().join("trace_seed2.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn sweep_needs_two_horizons() {
    let out = kbco(&["sweep", "--algo", "kernel1d", "--t", "1000"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_reports_a_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = kbco(&[
        "sweep",
        "--algo",
        "fkm",
        "--n",
        "2",
        "--env",
        "quadratic",
        "--t",
        "200,400,800",
        "--seeds",
        "1..3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert!(sweep["slope"].as_f64().unwrap().is_finite());
    assert_eq!(sweep["points"].as_array().unwrap().len(), 3);
}

#[test]
fn config_file_with_unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"algo": "fkm", "colour": 3}"#).unwrap();
    let out = kbco(&["run", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_drives_a_high_dimensional_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let cfg = serde_json::json!({
        "algo": "kernel_hd",
        "n": 2,
        "t": 60,
        "env": {"kind": "moving_optimum"},
        "seeds": [5],
        "out": dir.path().join("out"),
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = kbco(&["run", "--config", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("out/trace_seed5.csv")).unwrap();
    assert_eq!(text.lines().count(), 61);
    assert!(text.starts_with("t,x1,x2,in_K,"));
}

#[test]
fn verify_kernel1d_passes_and_catches_a_sign_flip() {
    let good = kbco(&["verify", "--suite", "kernel1d"]);
    assert!(good.status.success(), "{}", String::from_utf8_lossy(&good.stdout));
    let bad = kbco(&["verify", "--suite", "kernel1d", "--mutation", "k1-sign-flip"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL kernel1d/unbiasedness"));
}

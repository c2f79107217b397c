//! End-to-end tests of the `coded-qr` binary: artifact files, exit codes,
//! and byte-level reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_coded-qr"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn solve_writes_artifacts_and_reports_residual() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let output = run(&[
        "solve",
        "--n",
        "64",
        "--pr",
        "2",
        "--pc",
        "2",
        "--f",
        "1",
        "--inject",
        "none",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "stderr: {}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8_lossy(&output.stdout);
    let residual: f64 = stdout
        .trim()
        .rsplit(' ')
        .next()
        .and_then(|tok| tok.parse().ok())
        .unwrap_or_else(|| panic!("no residual in {stdout:?}"));
    assert!(residual <= 1e-10, "residual line reports {residual:e}");
    for file in ["x.csv", "residuals.json", "ledger.csv"] {
        assert!(out.join(file).exists(), "missing {file}");
    }
}

#[test]
fn factorize_identity_reports_identity_r() {
    let dir = tempfile::tempdir().unwrap();
    let a_path = dir.path().join("a.csv");
    let eye = coded_qr::DenseMatrix::identity(8);
    coded_qr::io::write_matrix_csv(&a_path, &eye).unwrap();
    let out = dir.path().join("run");
    let output = run(&[
        "factorize",
        "--n",
        "8",
        "--pr",
        "2",
        "--pc",
        "2",
        "--f",
        "0",
        "--matrix-csv",
        a_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let r1 = coded_qr::io::read_matrix_csv(&out.join("r1.csv")).unwrap();
    assert!(r1.sub(&eye).frobenius_norm() <= 1e-14);
}

#[test]
fn invalid_failure_budget_exits_2_with_json_error() {
    let output = run(&["solve", "--n", "16", "--pr", "4", "--pc", "4", "--f", "3"]);
    assert_eq!(output.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&output.stderr);
    let msg: serde_json::Value = serde_json::from_str(stderr.trim()).expect("json error object");
    assert_eq!(msg["exit"], 2);
    assert!(msg["error"].as_str().unwrap().contains("failure budget"));
}

#[test]
fn outputs_are_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("one");
    let out2 = dir.path().join("two");
    let args = |out: &Path| {
        vec![
            "solve".to_string(),
            "--n".into(),
            "32".into(),
            "--pr".into(),
            "4".into(),
            "--pc".into(),
            "4".into(),
            "--f".into(),
            "2".into(),
            "--inject".into(),
            "random".into(),
            "--seed".into(),
            "42".into(),
            "--audit".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let s1 = bin().args(args(&out1)).output().unwrap();
    let s2 = bin().args(args(&out2)).output().unwrap();
    assert!(s1.status.success() && s2.status.success());
    for file in ["x.csv", "ledger.csv", "residuals.json", "audit.json"] {
        assert_eq!(read(&out1.join(file)), read(&out2.join(file)), "{file} differs across reruns");
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("spec.json");
    std::fs::write(&cfg_path, r#"{"n": 32, "p_r": 4, "p_c": 4, "f": 2}"#).unwrap();
    let out = dir.path().join("run");
    let output = run(&[
        "solve",
        "--config",
        cfg_path.to_str().unwrap(),
        "--f",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let summary: serde_json::Value =
        serde_json::from_slice(&read(&out.join("residuals.json"))).unwrap();
    assert_eq!(summary["n"], 32, "config file field used");
    assert_eq!(summary["f"], 1, "flag overrides config file");
}

#[test]
fn sweep_empty_ranges_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let output = run(&[
        "sweep",
        "--n",
        "64",
        "--p-list",
        "7",
        "--f-list",
        "9",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "empty sweep should exit 0");
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1, "header only, got {lines:?}");
    assert!(lines[0].starts_with("p_r,p_c,n,f,"));
}

#[test]
fn sweep_ratio_decreases_in_p_and_grows_in_f() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let output = run(&[
        "sweep",
        "--n",
        "1920",
        "--alpha",
        "1",
        "--beta",
        "1",
        "--gamma",
        "0.0001",
        "--p-list",
        "4,8,16",
        "--f-list",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let ratios: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(ratios.len(), 3);
    assert!(ratios[0] > ratios[1] && ratios[1] > ratios[2], "ratio not decreasing: {ratios:?}");
}

#[test]
fn mds_check_f_zero_is_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let output = run(&["mds-check", "--f", "0", "--out", out.to_str().unwrap()]);
    assert!(output.status.success());
    let text = std::fs::read_to_string(out.join("mds.csv")).unwrap();
    assert_eq!(text.lines().count(), 1, "header-only CSV for f=0");
}

#[test]
fn innode_bound_emits_witness_below_k() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let output = run(&[
        "innode-bound",
        "--p-list",
        "4",
        "--f-list",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(output.status.success());
    let text = std::fs::read_to_string(out.join("innode_bound.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    // l,p,f,k,recoverable_at_k,recoverable_below_k,witness
    let cells: Vec<&str> = row.split(',').collect();
    assert_eq!(cells[3], "3", "K for L=8, P=4, f=1");
    assert_eq!(cells[4], "true");
    assert_eq!(cells[5], "false");
    assert!(!cells[6].is_empty(), "witness recorded");
}

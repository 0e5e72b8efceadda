//! End-to-end checks of the installed binary: exit codes, file outputs,
//! and the error surface a script would depend on.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mixprec");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Fresh scratch directory under the target dir; unique per test name.
fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    if dir.exists() {
        fs::remove_dir_all(&dir).unwrap();
    }
    dir
}

#[test]
fn solve_writes_the_full_artifact_set() {
    let dir = scratch("solve_artifacts");
    let out = run(&[
        "solve",
        "--mesh",
        "1,1,1,4",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    for f in [
        "run_config.json",
        "summary.json",
        "trace.csv",
        "counters.csv",
        "x.f64",
        "x.f64.json",
    ] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], serde_json::Value::Bool(true));
    assert_eq!(summary["storage_bytes"], 8);
    assert!(summary["final_residual"].as_f64().unwrap() <= 1e-10);
    let trace = fs::read_to_string(dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("# config="), "fingerprint comment first");
    assert!(trace.lines().nth(1).unwrap().starts_with("iteration,residual"));
    assert!(trace.lines().count() >= 3, "comment, header, and rows");

    // the run config records the resolved backend of every kernel
    let rc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(rc["backends"]["ax"], "ieee");
}

#[test]
fn hitting_the_iteration_cap_is_a_result_not_an_error() {
    let dir = scratch("solve_capped");
    let out = run(&[
        "solve",
        "--mesh",
        "1,1,1,5",
        "--tol",
        "1e-30",
        "--miter",
        "2",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["converged"], serde_json::Value::Bool(false));
    assert_eq!(summary["iterations"], 2);
}

#[test]
fn malformed_mesh_exits_2() {
    for bad in ["2,2,2", "2,2,2,x", "0,1,1,4", "1,1,1,33"] {
        let out = run(&["solve", "--mesh", bad]);
        assert_eq!(out.status.code(), Some(2), "mesh `{bad}` should be rejected");
    }
}

#[test]
fn unknown_scope_kernel_exits_2() {
    let dir = scratch("scope_bad");
    fs::create_dir_all(&dir).unwrap();
    let path = dir.join("scope.json");
    fs::write(&path, r#"{"default":"ieee","kernels":{"glsc33":"ieee"}}"#).unwrap();
    let out = run(&["solve", "--mesh", "1,1,1,4", "--scope", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("glsc33"), "stderr names the bad kernel");
}

#[test]
fn backend_and_scope_flags_conflict() {
    let out = run(&[
        "solve",
        "--backend",
        "ieee",
        "--scope",
        "whatever.json",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_backend_spec_exits_2() {
    let out = run(&["solve", "--mesh", "1,1,1,4", "--backend", "vprec:t99r8"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn roofline_point_predictions() {
    let out = run(&["roofline", "--ai", "0.125,10"]);
    assert!(out.status.success());
    let text = stdout(&out);
    // deep in the memory-bound regime halving the bytes doubles the rate
    assert!(text.contains("gain=2.0000"), "stdout: {text}");
    assert!(text.contains("Compute-bound"), "stdout: {text}");
}

#[test]
fn sweep_reports_rows_and_writes_csv() {
    let dir = scratch("sweep_out");
    let out = run(&[
        "sweep-vprec",
        "--mesh",
        "1,1,1,4",
        "--t-min",
        "50",
        "--t-max",
        "52",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("t=50"));
    assert!(text.contains("plateau"));
    let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5, "comment, header, one row per t");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rows"], 3);
    // binary64-equivalent widths sit on the plateau by construction
    assert_eq!(summary["plateau_onset"], 50);
}

#[test]
fn ensemble_summary_has_the_noise_statistics() {
    let dir = scratch("ensemble_out");
    let out = run(&[
        "mca-ensemble",
        "--mesh",
        "1,1,1,4",
        "--tol",
        "1e-6",
        "--runs",
        "4",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["all_converged"], serde_json::Value::Bool(true));
    assert!(summary["final_s2"].as_f64().unwrap() > 0.0);
    assert!(dir.join("ensemble.csv").is_file());
}

mod common;

use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_jointsurv");

#[test]
fn pipeline_runs_and_reruns_byte_identically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    common::run_pipeline(BIN, a.path());
    common::run_pipeline(BIN, b.path());
    let sa = common::snapshot(a.path());
    let sb = common::snapshot(b.path());
    for f in [
        "sim/longitudinal.csv",
        "sim/survival.csv",
        "sim/truth.csv",
        "joint/joint_fit.json",
        "joint/joint_chain1.csv",
        "joint/b_summary.csv",
        "two/b_hat.csv",
        "two/stage2_chain1.csv",
        "eval/evaluation.csv",
        "rep/table1.csv",
        "rep/table2.csv",
        "diag/diagnostics.json",
        "pred/config.txt",
    ] {
        assert!(sa.contains_key(f), "missing {f}");
    }
    assert!(sa.keys().any(|k| k.starts_with("pred/pred_")));
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (k, v) in &sa {
        assert!(v == &sb[k], "{k} differs between reruns");
    }
}

#[test]
fn unknown_flag_is_rejected() {
    let out = Command::new(BIN).args(["simulate", "--no-such-flag", "--out", "x"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["simulate", "--set", "n_patiens=10", "--out"])
        .arg(dir.path().join("s"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn missing_input_reports_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["fit", "--longitudinal", "/nonexistent/l.csv", "--survival", "/nonexistent/s.csv", "--out"])
        .arg(dir.path().join("f"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

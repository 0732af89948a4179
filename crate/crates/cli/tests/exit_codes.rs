use std::process::{Command, Output};

fn pdirac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdirac")).args(args).output().expect("binary runs")
}

#[test]
fn passing_run_exits_zero_and_writes_csv() {
    let out = pdirac(&["cr-check", "--p", "2"]);
    assert_eq!(out.status.code(), Some(0));
    let body = String::from_utf8(out.stdout).unwrap();
    assert!(body.starts_with("kind,index,re,im,value\n"));
    assert!(String::from_utf8(out.stderr).unwrap().lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(pdirac(&["solve", "--bogus", "1"]).status.code(), Some(2));
}

#[test]
fn invalid_parameters_are_usage_errors() {
    assert_eq!(pdirac(&["cr-check", "--p", "1"]).status.code(), Some(2));
    assert_eq!(pdirac(&["algebra-selftest", "--n", "9"]).status.code(), Some(2));
    assert_eq!(pdirac(&["covariance", "--theorem", "1", "--n", "3", "--p", "2"]).status.code(), Some(2));
    assert_eq!(pdirac(&["solve", "--region", "box", "--bc", "radial"]).status.code(), Some(2));
}

#[test]
fn failing_check_exits_one() {
    let out = pdirac(&["solve", "--h", "1/8", "--recovery-tol", "1e-12"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("FAIL"));
}

#[test]
fn json_output_carries_checks_and_params() {
    let out = pdirac(&["sphere-check", "--n", "2", "--format", "json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["command"], "sphere-check");
    assert_eq!(v["params"]["common"]["n"], 2);
    assert_eq!(v["passed"], true);
    assert!(v["checks"].as_array().unwrap().len() >= 5);
}

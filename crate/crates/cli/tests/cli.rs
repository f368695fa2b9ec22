use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tfsparse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tfsparse")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

const IDENTITY: &str = r#"{"command": "identity-suite", "resolution": 384, "params": {"triples": 2}}"#;

#[test]
fn list_presets() {
    let o = tfsparse(&["--list-presets"]);
    assert!(o.status.success());
    let v = stdout_json(&o);
    assert_eq!(v["commands"].as_array().unwrap().len(), 9);
    assert!(v["tables"].as_array().unwrap().iter().any(|t| t == "sharpness"));
}

#[test]
fn run_writes_reproducible_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "identity.json", IDENTITY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = tfsparse(&["run", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join("timings.json").exists());
    }
    let ra = fs::read(a.join("report.json")).unwrap();
    assert_eq!(ra, fs::read(b.join("report.json")).unwrap());
    let report: Value = serde_json::from_slice(&ra).unwrap();
    assert_eq!(report["command"], "identity-suite");
    assert_eq!(report["summary"]["failures"], 0);
}

#[test]
fn report_goes_to_stdout_without_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "identity.json", IDENTITY);
    let a = stdout_json(&tfsparse(&["run", &cfg]));
    let b = stdout_json(&tfsparse(&["run", &cfg, "--seed", "5"]));
    assert_eq!(a["seed"], 0);
    assert_eq!(b["seed"], 5);
    assert_ne!(a["digest"], b["digest"]);
    let c = stdout_json(&tfsparse(&["run", &cfg, "--resolution", "768"]));
    assert_eq!(c["resolution"], 768);
}

#[test]
fn tables_are_written_as_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "s.json", r#"{"command": "sharpness", "params": {"ms": [1, 2, 4], "trials": 2}}"#);
    let out = dir.path().join("out");
    let o = tfsparse(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join("sharpness.csv")).unwrap();
    assert!(csv.starts_with("M,lower_bound\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn config_errors_exit_two_with_record() {
    let dir = tempfile::tempdir().unwrap();
    for (i, text) in [
        r#"{"command": "nope"}"#,
        r#"{"command": "sharpness", "extra": true}"#,
        r#"not json"#,
        r#"{"command": "domination-check", "params": {"p": [1.1, 1.1, 1.1]}}"#,
    ]
    .iter()
    .enumerate()
    {
        let cfg = write_config(dir.path(), &format!("bad{i}.json"), text);
        let o = tfsparse(&["run", &cfg]);
        assert_eq!(o.status.code(), Some(2), "{text}");
        let v = stdout_json(&o);
        assert_eq!(v["status"], "error");
        assert_eq!(v["kind"], "config");
    }
    let o = tfsparse(&["run", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(2));
    let cfg = write_config(dir.path(), "ok.json", IDENTITY);
    assert_eq!(tfsparse(&["run", &cfg, "--resolution", "3"]).status.code(), Some(2));
    assert_eq!(tfsparse(&["bogus"]).status.code(), Some(2));
}

#[test]
fn failed_assertion_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // zero tolerance across refinements cannot hold for every function
    let cfg = write_config(
        dir.path(),
        "e.json",
        r#"{"command": "embedding", "resolution": 384, "params": {"functions": 6, "refinements": [1], "tolerance": 0.0}}"#,
    );
    let o = tfsparse(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let v = stdout_json(&o);
    assert!(v["summary"]["failures"].as_u64().unwrap() > 0);
}

#[test]
fn module_failure_exits_one_with_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "a.json",
        r#"{"command": "aqcor", "params": {"pairs": [[{"kind": "random_aq", "seed": 1, "target": 0.5, "q": 3.0}, {"kind": "constant", "value": 1.0}]]}}"#,
    );
    let out = dir.path().join("out");
    let o = tfsparse(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let v = stdout_json(&o);
    assert_eq!(v["stage"], "run");
    assert_eq!(v["kind"], "invalid_argument");
    assert!(out.join("failure.json").exists());
}

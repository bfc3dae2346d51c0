use std::path::Path;
use std::process::{Command, Output};

const CHAIN: &str = r#"{
  "env": { "kind": "chain", "states": 2, "actions": 2, "horizon": 2 },
  "expert_trajectories": 1,
  "iterations": 20,
  "learner": "mf",
  "seed": 0
}"#;

fn imlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn run_then_diagnose_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CHAIN);
    let res = tmp.path().join("res");
    let out = imlab(&["run", &cfg, "--out", res.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for f in ["metrics.csv", "summary.json", "artifacts.json"] {
        assert!(res.join(f).is_file(), "missing {f}");
    }
    let diag = imlab(&["diagnose", res.to_str().unwrap()]);
    assert_eq!(diag.status.code(), Some(0), "{}", stderr(&diag));
    assert!(String::from_utf8_lossy(&diag.stdout).contains("difference"));
}

#[test]
fn malformed_config_exits_2_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "{\n  \"env\": { \"kind\": \"chain\",\n  oops }\n}",
    );
    let out = imlab(&["run", &cfg, "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 3"), "{}", stderr(&out));
}

#[test]
fn unknown_field_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &CHAIN.replace("\"seed\"", "\"sede\""));
    let out = imlab(&["run", &cfg, "--out", tmp.path().join("r").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_output_dir_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CHAIN);
    assert_eq!(imlab(&["run", &cfg]).status.code(), Some(2));
}

#[test]
fn sweep_writes_one_set_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CHAIN);
    let res = tmp.path().join("sweep");
    let out = imlab(&[
        "--quiet",
        "sweep",
        &cfg,
        "--seeds",
        "5",
        "--out",
        res.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    for s in 0..5 {
        assert!(res.join(format!("seed-{s}")).join("metrics.csv").is_file());
    }
    let agg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(res.join("aggregate.json")).unwrap())
            .unwrap();
    assert_eq!(agg["final_gaps"].as_array().unwrap().len(), 5);
}

#[test]
fn bc_run_records_no_interactions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CHAIN);
    let res = tmp.path().join("bc");
    let out = imlab(&["bc", &cfg, "--out", res.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("interactions=0"));
}

#[test]
fn diagnose_missing_dir_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = imlab(&["diagnose", tmp.path().join("nope").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn diagnose_without_artifacts_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        &CHAIN.replace("\"seed\": 0", "\"seed\": 0, \"save_artifacts\": false"),
    );
    let res = tmp.path().join("res");
    assert_eq!(
        imlab(&["run", &cfg, "--out", res.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    let out = imlab(&["diagnose", res.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("artifact"), "{}", stderr(&out));
}

#[test]
fn tampered_metrics_fail_diagnosis() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), CHAIN);
    let res = tmp.path().join("res");
    assert_eq!(
        imlab(&["run", &cfg, "--out", res.to_str().unwrap()])
            .status
            .code(),
        Some(0)
    );
    let metrics = res.join("metrics.csv");
    let text = std::fs::read_to_string(&metrics).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let last = lines.last_mut().unwrap();
    let mut cols: Vec<String> = last.split(',').map(str::to_owned).collect();
    cols[1] = "0.5".into();
    *last = cols.join(",");
    std::fs::write(&metrics, lines.join("\n") + "\n").unwrap();
    assert_eq!(
        imlab(&["diagnose", res.to_str().unwrap()]).status.code(),
        Some(3)
    );
}

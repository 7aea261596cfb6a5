use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn boqc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boqc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}); stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn scratch(name: &str, contents: &str) -> PathBuf {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

#[test]
fn run_grover_is_deterministic() {
    let a = boqc(&["run", "grover2", "--seed", "7"]);
    assert_eq!(a.status.code(), Some(0));
    let report = json(&a);
    assert_eq!(report["nodes"], 8);
    assert_eq!(report["measurement_rounds"], 6);
    assert_eq!(report["io_mode"], "cq");
    let b = boqc(&["run", "grover2", "--seed", "7"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn run_path_exhaustive_matches_pattern() {
    let out = boqc(&["run", "path", "--exhaustive", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["exact"]["pass"], true);
}

#[test]
fn graph_without_flow_is_a_validation_error() {
    let graph = r#"{"vertices":[1,2,3],"edges":[[1,2],[2,3],[1,3]],"I":[1],"O":[3],"b":2}"#;
    let g = scratch("triangle.json", graph);
    let s = scratch("triangle-scenario.json", r#"{"graph":"triangle.json"}"#);
    assert_eq!(boqc(&["verify-flow", g.to_str().unwrap()]).status.code(), Some(2));
    let out = boqc(&["run", s.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no flow"));
}

#[test]
fn verify_flow_reports_the_flow() {
    let out = boqc(&["verify-flow", "lazy7"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["has_flow"], true);
    assert_eq!(v["verified"], true);
}

#[test]
fn unknown_scenario_and_bob() {
    assert_eq!(boqc(&["run", "no-such-scenario"]).status.code(), Some(1));
    let out = boqc(&["run", "path", "--bob", "sneaky"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown bob"));
}

#[test]
fn oversized_enumeration_exits_with_size_error() {
    assert_eq!(boqc(&["run", "grover2", "--exhaustive"]).status.code(), Some(4));
}

#[test]
fn blindness_path_exhaustive() {
    let out = boqc(&["blindness", "path", "--exhaustive"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["pass"], true);
    assert!(v["classical_tvd"].as_f64().unwrap() <= 1e-9);
    let out = boqc(&["blindness", "path", "--exhaustive", "--no-randomness"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(json(&out)["classical_tvd"].as_f64().unwrap() > 0.1);
}

#[test]
fn blindness_sampled_reports_p_values() {
    let out = boqc(&["blindness", "path", "--shots", "2000", "--seed", "5", "--protocol", "boqco"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    let p = v["delta_chi_square_p"].as_object().expect("p-values in sampled mode");
    assert_eq!(p.len(), 3);
    assert!(p.values().all(|x| x.as_f64().unwrap() >= 1e-3));
}

#[test]
fn lazy_stats_peaks() {
    let v = json(&boqc(&["lazy-stats", "lazy7"]));
    assert_eq!(v["peak"], 4);
    let v = json(&boqc(&["lazy-stats", "path"]));
    assert_eq!(v["peak"], 2);
    assert_eq!(v["bound"], 2);
    let out = boqc(&["lazy-stats", "--random", "20", "--seed", "3"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["violations"], 0);
}

#[test]
fn join_grover() {
    let out = boqc(&["join", "grover2"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["public"]["graph"]["vertices"].as_array().unwrap().len(), 8);
    assert_eq!(v["flow"]["f"]["5"], 8);
}

#[test]
fn report_flag_writes_file() {
    let path = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("flow-report.json");
    let _ = std::fs::remove_file(&path);
    let out = boqc(&["verify-flow", "path", "--report", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(v["has_flow"], true);
}

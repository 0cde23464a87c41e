use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_popharvest");

fn logistic(sigma: f64, seed_cost: f64) -> String {
    format!(
        r#"{{
  "preset": "logistic_1d",
  "params": {{"b": 3, "c": 2, "sigma": {sigma}, "harvest_price": [1], "seed_cost": [{seed_cost}]}},
  "grid": {{"h": 0.1, "upper": 10}},
  "simulate": {{"paths": 2000, "horizon": 200, "dt": 0.001, "seed": 7}},
  "output": "out"
}}"#
    )
}

fn scenario(dir: &TempDir, text: &str) -> PathBuf {
    let path = dir.path().join("scenario.json");
    fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("POPHARVEST_THREADS", "1").output().unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn table(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn solve_writes_value_and_policy_tables() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, &logistic(1.0, 3.0));
    let out = run(&["solve", arg(&sc)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let values = table(&dir.path().join("out/value.csv"));
    assert_eq!(values.len(), 101);
    assert_eq!(values[0][0], "0");
    assert!(values[0][1].parse::<f64>().unwrap() > 0.0);
    let first = fs::read(dir.path().join("out/value.csv")).unwrap();
    let policy = fs::read(dir.path().join("out/policy.csv")).unwrap();
    assert!(run(&["solve", arg(&sc)]).status.success());
    assert_eq!(fs::read(dir.path().join("out/value.csv")).unwrap(), first);
    assert_eq!(fs::read(dir.path().join("out/policy.csv")).unwrap(), policy);
}

#[test]
fn expensive_seeding_only_restocks_an_empty_habitat() {
    // The absorbing origin keeps its restocking option; see the solver tests.
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, &logistic(1.0, 50.0));
    assert!(run(&["solve", arg(&sc)]).status.success());
    let policy = table(&dir.path().join("out/policy.csv"));
    assert_eq!(policy[0][1], "-1");
    assert!(policy[1..].iter().all(|row| row[1].parse::<i32>().unwrap() >= 0));
}

#[test]
fn malformed_scenarios_exit_with_one() {
    let dir = TempDir::new().unwrap();
    for text in [
        "{ not json",
        r#"{"preset": "logistic_1d", "grid": {"h": 0.1, "upper": 10}, "output": "o", "colour": "red"}"#,
        r#"{"preset": "logistic_1d", "grid": {"h": 0.3, "upper": 10}, "output": "o"}"#,
    ] {
        let sc = scenario(&dir, text);
        assert_eq!(run(&["solve", arg(&sc)]).status.code(), Some(1), "{text}");
    }
    assert_eq!(run(&["solve", "/nonexistent/scenario.json"]).status.code(), Some(1));
}

#[test]
fn failed_assumption_is_named_on_stderr() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, &logistic(1.0, 0.5));
    let out = run(&["solve", arg(&sc)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("price-gap"));
}

#[test]
fn non_convergence_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let text = logistic(1.0, 3.0).replace(r#""grid""#, r#""solver": {"max_iters": 10}, "grid""#);
    let sc = scenario(&dir, &text);
    let out = run(&["solve", arg(&sc)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(dir.path().join("out/value.csv").exists());
}

#[test]
fn simulate_needs_a_solution_and_a_state_in_the_box() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, &logistic(1.0, 3.0));
    assert_eq!(run(&["simulate", arg(&sc), "--x0", "2"]).status.code(), Some(1));
    assert!(run(&["solve", arg(&sc)]).status.success());
    assert_eq!(run(&["simulate", arg(&sc), "--x0", "11"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", arg(&sc), "--x0", "-1"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", arg(&sc), "--x0", "1,1"]).status.code(), Some(1));
}

#[test]
fn simulate_agrees_with_the_solver() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, &logistic(1.0, 3.0));
    assert!(run(&["solve", arg(&sc)]).status.success());
    let path_csv = dir.path().join("path.csv");
    let out = run(&["simulate", arg(&sc), "--x0", "2", "--path-csv", arg(&path_csv)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let est = table(&dir.path().join("out/estimate.csv"));
    let row: Vec<f64> = est[0].iter().map(|v| v.parse().unwrap()).collect();
    let (discrepancy, tolerance) = (row[6], row[7]);
    assert!(discrepancy <= tolerance, "{row:?}");
    assert!(fs::read_to_string(&path_csv).unwrap().starts_with("t,X1,Y1,Z1"));
}

#[test]
fn deterministic_scenario_has_zero_standard_error() {
    let dir = TempDir::new().unwrap();
    let text = logistic(0.0, 3.0).replace(r#""paths": 2000, "horizon": 200"#, r#""paths": 1, "horizon": 20"#);
    let sc = scenario(&dir, &text);
    assert!(run(&["solve", arg(&sc)]).status.success());
    assert!(run(&["simulate", arg(&sc), "--x0", "1.5"]).status.success());
    let est = table(&dir.path().join("out/estimate.csv"));
    assert_eq!(est[0][2], "0");
}

#[test]
fn verify_writes_machine_and_text_reports() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, &logistic(1.0, 3.0));
    assert!(run(&["solve", arg(&sc)]).status.success());
    let out = run(&["verify", arg(&sc)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/audit.json")).unwrap()).unwrap();
    assert!(json["checks"].as_array().unwrap().iter().all(|c| c["passed"] == true));
    assert!(fs::read_to_string(dir.path().join("out/audit.txt")).unwrap().contains("hjb-subsolution"));
}

#[test]
fn verify_flags_a_tampered_value_table() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, &logistic(1.0, 3.0));
    assert!(run(&["solve", arg(&sc)]).status.success());
    let path = dir.path().join("out/value.csv");
    let mut rows = table(&path);
    let v: f64 = rows[30][1].parse().unwrap();
    rows[30][1] = (v + 0.01).to_string();
    let mut w = csv::Writer::from_path(&path).unwrap();
    w.write_record(["x1", "value"]).unwrap();
    for r in &rows {
        w.write_record(r).unwrap();
    }
    w.flush().unwrap();
    assert_eq!(run(&["verify", arg(&sc)]).status.code(), Some(2));
}

#[test]
fn sweep_differences_shrink() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, &logistic(1.0, 3.0));
    assert!(run(&["sweep", arg(&sc), "--h", "0.05,0.2,0.1"]).status.success());
    let rows = table(&dir.path().join("out/sweep.csv"));
    let hs: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(hs, ["0.2", "0.1", "0.05"]);
    assert_eq!(rows[0][4], "");
    let d1: f64 = rows[1][4].parse().unwrap();
    let d2: f64 = rows[2][4].parse().unwrap();
    assert!(d2 < d1, "{d1} {d2}");
    assert_eq!(table(&dir.path().join("out/sweep_values.csv")).len(), 51);
}

#[test]
fn sweep_edge_cases() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, &logistic(1.0, 3.0));
    assert!(run(&["sweep", arg(&sc), "--h", "0.5"]).status.success());
    let rows = table(&dir.path().join("out/sweep.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][4], "");
    assert_eq!(run(&["sweep", arg(&sc), "--h", "0.3"]).status.code(), Some(1));
    assert_eq!(run(&["sweep", arg(&sc), "--h", "0.4,0.25"]).status.code(), Some(1));
}

#[test]
fn thread_variable_is_validated() {
    let dir = TempDir::new().unwrap();
    let sc = scenario(&dir, &logistic(1.0, 3.0));
    let out = Command::new(BIN).args(["solve", arg(&sc)]).env("POPHARVEST_THREADS", "many").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

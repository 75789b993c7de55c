use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdal-arx")).args(args).output().unwrap()
}

fn run_in(dir: &TempDir, args: &[&str]) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--out", dir.path().to_str().unwrap()]);
    run(&all)
}

fn read_json(dir: &TempDir, name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.path().join(name)).unwrap()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_converged_solution() {
    let dir = TempDir::new().unwrap();
    let problem = scenario("problem_T10.json");
    let solver = scenario("solver.json");
    let out = run_in(&dir, &["solve", path_str(&problem), "--solver", path_str(&solver)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = read_json(&dir, "solution.json");
    assert_eq!(v["status"], "Converged");
    assert!(v["outer_residual"].as_f64().unwrap() <= 1e-6);
    assert_eq!(v["solution"]["u"].as_array().unwrap().len(), 10);
}

#[test]
fn malformed_problem_reports_position_and_field() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\n  \"horizon\": \"ten\"\n}\n").unwrap();
    let out = run_in(&dir, &["solve", path_str(&bad)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("horizon"), "{err}");
}

#[test]
fn missing_file_is_an_input_error() {
    let dir = TempDir::new().unwrap();
    let out = run_in(&dir, &["solve", "/nonexistent/problem.json"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exhausted_outer_budget_exits_with_two() {
    let dir = TempDir::new().unwrap();
    let solver = dir.path().join("solver.json");
    fs::write(&solver, r#"{"rho": 1.0, "N_out": 0, "N_in": 100, "eps_out": 1e-6, "eps_in": 1e-6}"#).unwrap();
    let problem = scenario("problem_T10.json");
    let out = run_in(&dir, &["solve", path_str(&problem), "--solver", path_str(&solver)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_bundled_scenarios() {
    for name in ["timevarying_T10.json", "lpv_T10.json"] {
        let dir = TempDir::new().unwrap();
        let out = run_in(&dir, &["simulate", path_str(&scenario(name))]);
        assert_eq!(out.status.code(), Some(0), "{name}");
        let csv = fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
        assert_eq!(csv.lines().count(), 201, "{name}");
        let summary = read_json(&dir, "summary.json");
        assert_eq!(summary["violations"], 0, "{name}");
        assert_eq!(summary["nonconverged"], 0, "{name}");
    }
}

#[test]
fn single_step_simulation() {
    let dir = TempDir::new().unwrap();
    let out = run_in(&dir, &["simulate", path_str(&scenario("timevarying_T10.json")), "--steps", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("trajectories.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn simulate_is_deterministic_except_timing() {
    let strip = |dir: &TempDir| -> Vec<String> {
        fs::read_to_string(dir.path().join("trajectories.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for d in [&a, &b] {
        let out = run_in(d, &["simulate", path_str(&scenario("timevarying_T10.json")), "--steps", "50"]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn self_compare_has_zero_deviation() {
    let dir = TempDir::new().unwrap();
    let out = run_in(&dir, &["compare", path_str(&scenario("timevarying_T10.json")), "--self-compare", "--steps", "30"]);
    assert_eq!(out.status.code(), Some(0));
    let v = read_json(&dir, "comparison.json");
    assert_eq!(v["max_input_deviation"].as_f64().unwrap(), 0.0);
}

#[test]
fn compare_reports_construction_time() {
    let dir = TempDir::new().unwrap();
    let out = run_in(&dir, &["compare", path_str(&scenario("timevarying_T20.json")), "--steps", "10"]);
    assert_eq!(out.status.code(), Some(0));
    let v = read_json(&dir, "comparison.json");
    assert_eq!(v["shadow"], "oracle");
    assert!(v["shadow_construct_avg_ms"].as_f64().unwrap() > 0.0);
    assert!(v["max_input_deviation"].as_f64().unwrap() < 0.05);
}

#[test]
fn bench_reports_samples_and_machine() {
    for repeats in ["1", "5"] {
        let dir = TempDir::new().unwrap();
        let out = run_in(
            &dir,
            &["bench", path_str(&scenario("timevarying_T10.json")), "--steps", "10", "--repeats", repeats, "--horizons", "10,20"],
        );
        assert_eq!(out.status.code(), Some(0));
        let v = read_json(&dir, "bench.json");
        assert!(v["machine"]["cpus"].as_u64().unwrap() >= 1);
        let rows = v["rows"].as_array().unwrap();
        assert_eq!(rows.len(), 2);
        let samples = rows[0]["avg_ms"]["samples"].as_array().unwrap();
        assert_eq!(samples.len(), repeats.parse::<usize>().unwrap());
        assert!(rows[0]["avg_ms"]["variance"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn bench_with_oracle_times_both() {
    let dir = TempDir::new().unwrap();
    let out = run_in(&dir, &["bench", path_str(&scenario("timevarying_T10.json")), "--steps", "5", "--oracle"]);
    assert_eq!(out.status.code(), Some(0));
    let v = read_json(&dir, "bench.json");
    assert!(v["rows"][0]["oracle_solve_avg_ms"]["median"].as_f64().unwrap() > 0.0);
}

#[test]
fn help_lists_exit_codes() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Exit codes"));
}

#[test]
fn unknown_subcommand_fails() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
}

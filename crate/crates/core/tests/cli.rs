mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::{rel_close, scenario_path};
use serde_json::{json, Value};
use trade::mapper::calc_cost;
use trade::model::Placement;
use trade::problem::ProblemFile;

fn trade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trade"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_json(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_vec_pretty(value).unwrap()).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn matrix(unit: &str, dim: usize, data: Vec<f64>) -> Value {
    json!({ "unit": unit, "rows": dim, "cols": dim, "data": data })
}

/// Four chained services; only the last node can hold all of them, so
/// colocating everything there is the unique optimum.
fn chain_fixture() -> Value {
    let k = 4;
    let mut traffic = vec![0.0; k * k];
    for s in 0..k - 1 {
        traffic[s * k + s + 1] = 1000.0 * (s + 1) as f64;
    }
    json!({
        "schema_version": 1,
        "services": (0..k).map(|s| json!({ "name": format!("svc{s}"), "demand": { "cpu": 1.0 } })).collect::<Vec<_>>(),
        "nodes": [
            { "name": "small-a", "capacity": { "cpu": 1.0 } },
            { "name": "small-b", "capacity": { "cpu": 1.0 } },
            { "name": "small-c", "capacity": { "cpu": 1.0 } },
            { "name": "big", "capacity": { "cpu": 4.0 } },
        ],
        "traffic": matrix("bytes/s", k, traffic),
        "delays": matrix("ms", 4, vec![
            0.0, 2.0, 3.0, 4.0,
            2.0, 0.0, 5.0, 6.0,
            3.0, 5.0, 0.0, 7.0,
            4.0, 6.0, 7.0, 0.0,
        ]),
        "initial_placement": ["small-a", "small-b", "small-c", "big"],
    })
}

#[test]
fn solve_output_cost_is_recomputable() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_json(dir.path(), "problem.json", &chain_fixture());
    let out = dir.path().join("out");
    let run = trade(&[
        "solve",
        "--problem",
        problem.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let result = read_json(&out.join("placement.json"));
    assert!(out.join("placement.csv").exists());

    let loaded = ProblemFile::load(&problem).unwrap();
    let assignment: Vec<usize> = serde_json::from_value(result["placement"].clone()).unwrap();
    let placement = Placement::new(assignment, 4).unwrap();
    let p = &loaded.problem;
    let recomputed = calc_cost(
        p.traffic(),
        &placement,
        p.delays(),
        p.demands(),
        p.capacities(),
        p.weights(),
    )
    .unwrap();
    let reported = result["cost"]["total"].as_f64().unwrap();
    assert!(rel_close(reported, recomputed.total, 1e-9));
    assert!(reported <= result["initial_cost"]["total"].as_f64().unwrap());
    assert_eq!(result["feasible"], json!(true));
    assert!(result.get("elapsed_s").is_none());
}

#[test]
fn worker_count_does_not_change_a_unique_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_json(dir.path(), "problem.json", &chain_fixture());
    let mut placements = Vec::new();
    for workers in ["1", "4"] {
        let out = dir.path().join(format!("out{workers}"));
        let run = trade(&[
            "solve",
            "--problem",
            problem.to_str().unwrap(),
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(run.status.success());
        placements.push(read_json(&out.join("placement.json"))["placement"].clone());
    }
    assert_eq!(placements[0], json!([3, 3, 3, 3]));
    assert_eq!(placements[0], placements[1]);

    let out = dir.path().join("oracle");
    let run = trade(&[
        "oracle",
        "--problem",
        problem.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    assert_eq!(read_json(&out.join("oracle.json"))["placement"], json!([3, 3, 3, 3]));
}

#[test]
fn malformed_matrix_is_an_input_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut fixture = chain_fixture();
    fixture["delays"]["data"] = json!([0.0, 1.0, 1.0]);
    let problem = write_json(dir.path(), "problem.json", &fixture);
    let out = dir.path().join("out");
    let run = trade(&[
        "solve",
        "--problem",
        problem.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("delays"), "{stderr}");
    // Nothing is written when the run fails.
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn missing_file_and_bad_flags_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = dir.path().join("nope.json");
    let run = trade(&[
        "solve",
        "--problem",
        missing.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(2));
    let run = trade(&["simulate", "--scenario", "x.json", "--policy", "random"]);
    assert_eq!(run.status.code(), Some(2));
    assert!(trade(&["--help"]).status.success());
}

#[test]
fn analyze_handles_empty_and_unknown() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_json(
        dir.path(),
        "empty.json",
        &json!({ "schema_version": 1, "services": ["a", "b"], "window_s": 60.0, "samples": [] }),
    );
    let out = dir.path().join("out");
    let run = trade(&[
        "analyze",
        "--dump",
        empty.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(run.status.success());
    let stress = read_json(&out.join("stress.json"));
    assert_eq!(stress["graph"]["data"], json!([0.0, 0.0, 0.0, 0.0]));
    assert_eq!(stress["sorted_pairs"], json!([]));

    let unknown = write_json(
        dir.path(),
        "unknown.json",
        &json!({
            "schema_version": 1,
            "services": ["a", "b"],
            "window_s": 60.0,
            "samples": [
                { "upstream": "a", "downstream": "ghost", "sent_bytes_total": 0.0, "received_bytes_total": 0.0, "timestamp": 0.0 },
            ],
        }),
    );
    let out = dir.path().join("out2");
    let run = trade(&[
        "analyze",
        "--dump",
        unknown.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("ghost"));
    assert!(!out.exists() || std::fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn simulate_writes_report_and_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let sc = scenario_path("delay-step");
    let run = trade(&[
        "simulate",
        "--scenario",
        sc.to_str().unwrap(),
        "--policy",
        "netmarks",
        "--out",
        out.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["policy"], json!("netmarks"));
    let decisions = std::fs::read_to_string(out.join("decisions.jsonl")).unwrap();
    assert_eq!(decisions.lines().count(), report["decisions"].as_array().unwrap().len());
    let windows = std::fs::read_to_string(out.join("windows.csv")).unwrap();
    assert_eq!(windows.lines().count(), 1 + report["windows"].as_array().unwrap().len());
}

#[test]
fn compare_has_one_row_per_window_and_policy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let sc = scenario_path("delay-step");
    let run = trade(&[
        "compare",
        "--scenario",
        sc.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert!(run.status.success());
    let compare = read_json(&out.join("compare.json"));
    assert_eq!(compare["policies"].as_array().unwrap().len(), 3);
    let rows = compare["rows"].as_array().unwrap().len();
    // 360 s in 30 s windows.
    assert_eq!(rows, 12 * 3);
    let csv = std::fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + rows);
    assert!(String::from_utf8_lossy(&run.stderr).contains("goodput"));
}

#[test]
fn seed_override_changes_jitter_only() {
    let dir = tempfile::tempdir().unwrap();
    let sc = scenario_path("zero-delay");
    let mut means = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(seed);
        let run = trade(&[
            "simulate",
            "--scenario",
            sc.to_str().unwrap(),
            "--policy",
            "kdefault",
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(run.status.success());
        let report = read_json(&out.join("report.json"));
        assert_eq!(report["seed"], json!(seed.parse::<u64>().unwrap()));
        means.push(report["totals"]["mean_ms"].as_f64().unwrap());
    }
    assert_ne!(means[0], means[1]);
}

#[test]
fn response_heavy_pair_ranks_by_combined_stress() {
    let dir = tempfile::tempdir().unwrap();
    let sample = |u: &str, v: &str, sent: f64, recv: f64, t: f64| json!({ "upstream": u, "downstream": v, "sent_bytes_total": sent, "received_bytes_total": recv, "timestamp": t });
    // post-storage answers with 40x the bytes it receives; the upload pair
    // pushes more request bytes but far fewer in total.
    let dump = write_json(
        dir.path(),
        "dump.json",
        &json!({
            "schema_version": 1,
            "services": ["frontend", "post-storage", "upload"],
            "window_s": 60.0,
            "samples": [
                sample("frontend", "post-storage", 0.0, 0.0, 0.0),
                sample("frontend", "post-storage", 40e6, 1e6, 60.0),
                sample("frontend", "upload", 0.0, 0.0, 0.0),
                sample("frontend", "upload", 0.1e6, 5e6, 60.0),
            ],
        }),
    );
    let out = dir.path().join("out");
    let run = trade(&[
        "analyze",
        "--dump",
        dump.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(run.status.success());
    let pairs = read_json(&out.join("stress.json"))["sorted_pairs"].clone();
    assert_eq!(pairs[0]["downstream"], json!("post-storage"));
    assert!(rel_close(pairs[0]["stress"].as_f64().unwrap(), 41e6 / 120.0, 1e-12));
    assert_eq!(pairs[1]["downstream"], json!("upload"));
    assert_eq!(pairs.as_array().unwrap().len(), 2);
}

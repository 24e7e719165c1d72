use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn qcop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcop")).args(args).output().expect("qcop runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_grid(dir: &TempDir, name: &str, rows: usize, robots: &str) -> PathBuf {
    let path = p(dir, name);
    let r = rows.to_string();
    let out = qcop(&["gen", "grid", "--rows", &r, "--cols", &r, "--robots", robots, "-o", s(&path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    path
}

fn report(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_3x3_budget_6() {
    let dir = TempDir::new().unwrap();
    let inst = gen_grid(&dir, "g.json", 3, "1:6");
    let rep = p(&dir, "r.json");
    let out = qcop(&["solve", s(&inst), "--gap", "0", "-o", s(&rep)]);
    assert_eq!(code(&out), 0);
    let r = report(&rep);
    assert!((r["tours"]["utility"].as_f64().unwrap() - 9.0).abs() < 1e-6);
    assert_eq!(r["solution"]["status"], "Optimal");
    let sha = hex::encode(Sha256::digest(std::fs::read(&inst).unwrap()));
    assert_eq!(r["instance_sha256"], sha.as_str());

    let stderr = String::from_utf8(out.stderr).unwrap();
    let events: Vec<Value> = stderr.lines().map(|l| serde_json::from_str(l).expect("progress is JSON")).collect();
    assert!(!events.is_empty());
    for e in &events {
        for key in ["t", "incumbent", "bound", "gap", "nodes"] {
            assert!(e.get(key).is_some(), "missing {key}");
        }
    }
}

#[test]
fn solve_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let inst = gen_grid(&dir, "g.json", 4, "1:8");
    let a = p(&dir, "a.json");
    let b = p(&dir, "b.json");
    assert_eq!(code(&qcop(&["solve", s(&inst), "-o", s(&a)])), 0);
    assert_eq!(code(&qcop(&["solve", s(&inst), "-o", s(&b)])), 0);
    assert_eq!(report(&a)["tours"], report(&b)["tours"]);
}

#[test]
fn dump_model_uses_fixed_names() {
    let dir = TempDir::new().unwrap();
    let inst = gen_grid(&dir, "g.json", 3, "1:4");
    let lp = p(&dir, "m.lp");
    assert_eq!(code(&qcop(&["solve", s(&inst), "--dump-model", s(&lp), "-o", s(&p(&dir, "r.json"))])), 0);
    let text = std::fs::read_to_string(lp).unwrap();
    for name in ["x_0", "a_0_1_4", "u_0_4", "z_1_4"] {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn gap_run_on_6x6_stops_within_gap() {
    let dir = TempDir::new().unwrap();
    let inst = gen_grid(&dir, "g.json", 6, "0:16");
    let rep = p(&dir, "r.json");
    let out = qcop(&["solve", s(&inst), "--gap", "0.2", "-o", s(&rep)]);
    assert_eq!(code(&out), 0);
    assert!(report(&rep)["solution"]["gap"].as_f64().unwrap() <= 0.2 + 1e-12);
}

#[test]
fn corrupt_json_is_a_parse_error() {
    let dir = TempDir::new().unwrap();
    let bad = p(&dir, "bad.json");
    std::fs::write(&bad, "{\"nodes\": [").unwrap();
    let out = qcop(&["solve", s(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("malformed"));
}

#[test]
fn one_row_grid_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = qcop(&["gen", "grid", "--rows", "1", "--cols", "3", "-o", s(&p(&dir, "x.json"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(code(&qcop(&["solve", "--no-such-flag"])), 2);
}

#[test]
fn budget_below_round_trip_is_infeasible() {
    let dir = TempDir::new().unwrap();
    let inst = gen_grid(&dir, "g.json", 3, "1:0.5");
    assert_eq!(code(&qcop(&["solve", s(&inst)])), 3);
}

#[test]
fn tiny_time_limit_exits_with_time_limit_code() {
    let dir = TempDir::new().unwrap();
    let inst = gen_grid(&dir, "g.json", 6, "0:24");
    let out = qcop(&["solve", s(&inst), "--time-limit", "0.01", "-o", s(&p(&dir, "r.json"))]);
    assert_eq!(code(&out), 4);
}

#[test]
fn full_coverage_estimate_has_zero_error() {
    let dir = TempDir::new().unwrap();
    let inst = gen_grid(&dir, "g.json", 2, "0:4");
    let series = p(&dir, "s.csv");
    assert_eq!(code(&qcop(&["gen", "series", "--instance", s(&inst), "-o", s(&series)])), 0);
    let rep = p(&dir, "r.json");
    assert_eq!(code(&qcop(&["solve", s(&inst), "-o", s(&rep)])), 0);
    let est = p(&dir, "e.csv");
    let out = qcop(&[
        "estimate", "--instance", s(&inst), "--series", s(&series), "--train", "0:50", "--at", "100,150,200",
        "--tours", s(&rep), "-o", s(&est),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let scores: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(scores["mean_abs_error"].as_f64().unwrap(), 0.0);
    assert!((scores["quality"].as_f64().unwrap() - 4.0).abs() < 1e-12);

    let side: Value = serde_json::from_str(&std::fs::read_to_string(p(&dir, "e.csv.provenance.json")).unwrap()).unwrap();
    assert_eq!(side["provenance"].as_array().unwrap().len(), 3);
    assert_eq!(side["provenance"][0][0], "Measured");
    let csv = std::fs::read_to_string(est).unwrap();
    assert!(csv.starts_with("t,node_0,node_1,node_2,node_3\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn estimate_inside_training_range_fails() {
    let dir = TempDir::new().unwrap();
    let inst = gen_grid(&dir, "g.json", 2, "0:4");
    let series = p(&dir, "s.csv");
    qcop(&["gen", "series", "--instance", s(&inst), "-o", s(&series)]);
    let rep = p(&dir, "r.json");
    qcop(&["solve", s(&inst), "-o", s(&rep)]);
    let out = qcop(&[
        "estimate", "--instance", s(&inst), "--series", s(&series), "--train", "0:50", "--at", "20",
        "--tours", s(&rep), "-o", s(&p(&dir, "e.csv")),
    ]);
    assert_ne!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("training"));
}

#[test]
fn heatmap_matches_requested_resolution() {
    let dir = TempDir::new().unwrap();
    let inst = gen_grid(&dir, "g.json", 3, "1:4");
    let series = p(&dir, "s.csv");
    qcop(&["gen", "series", "--instance", s(&inst), "-o", s(&series)]);
    let img = p(&dir, "h.pgm");
    let out = qcop(&["heatmap", "--instance", s(&inst), "--series", s(&series), "--at", "7", "--res", "37x21", "-o", s(&img)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(img).unwrap();
    let header = b"P5\n37 21\n255\n";
    assert!(bytes.starts_with(header));
    assert_eq!(bytes.len(), header.len() + 37 * 21);
}

#[test]
fn oracle_agrees_with_solve_on_3x3() {
    let dir = TempDir::new().unwrap();
    let inst = gen_grid(&dir, "g.json", 3, "1:5");
    let rep = p(&dir, "r.json");
    assert_eq!(code(&qcop(&["solve", s(&inst), "-o", s(&rep)])), 0);
    let out = qcop(&["oracle", s(&inst)]);
    assert_eq!(code(&out), 0);
    let o: Value = serde_json::from_slice(&out.stdout).unwrap();
    let exact = report(&rep)["tours"]["utility"].as_f64().unwrap();
    assert!((o["result"]["best_value"].as_f64().unwrap() - exact).abs() < 1e-9);
}

#[test]
fn oracle_rejects_10x10() {
    let dir = TempDir::new().unwrap();
    let inst = gen_grid(&dir, "g.json", 10, "0:4");
    let out = qcop(&["oracle", s(&inst)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn bench_rejects_empty_suite() {
    assert_eq!(code(&qcop(&["bench", "--suite", ""])), 2);
    assert_eq!(code(&qcop(&["bench", "--suite", "nope"])), 2);
}

#[test]
fn bench_trivial_writes_fixed_columns() {
    let dir = TempDir::new().unwrap();
    let csv = p(&dir, "t.csv");
    let out = qcop(&["bench", "--suite", "trivial", "-o", s(&csv)]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("grid,budget,utility,gap,time_s,nodes\n"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn bench_oracle_without_cache_says_how_to_build_it() {
    let dir = TempDir::new().unwrap();
    let out = qcop(&["bench", "--suite", "oracle", "--cache-dir", s(dir.path())]);
    assert_ne!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bench --suite oracle-cache"));
}

#[test]
fn pipeline_gen_learn_solve_estimate_heatmap() {
    let dir = TempDir::new().unwrap();
    let grid = p(&dir, "g.json");
    let out = qcop(&["gen", "grid", "--rows", "4", "--cols", "4", "--perturb", "0.2", "--seed", "3", "--robots", "5:5", "-o", s(&grid)]);
    assert_eq!(code(&out), 0);
    let series = p(&dir, "s.csv");
    assert_eq!(code(&qcop(&["gen", "series", "--instance", s(&grid), "-o", s(&series)])), 0);
    let learned = p(&dir, "l.json");
    assert_eq!(code(&qcop(&["learn", "--instance", s(&grid), "--series", s(&series), "--train", "0:50", "-o", s(&learned)])), 0);
    let rep = p(&dir, "r.json");
    assert_eq!(code(&qcop(&["solve", s(&learned), "-o", s(&rep)])), 0);
    let est = p(&dir, "e.csv");
    let out = qcop(&[
        "estimate", "--instance", s(&learned), "--series", s(&series), "--train", "0:50", "--at", "100",
        "--tours", s(&rep), "-o", s(&est),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let img = p(&dir, "h.pgm");
    let out = qcop(&["heatmap", "--instance", s(&learned), "--series", s(&est), "--at", "100", "--res", "16", "-o", s(&img)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read(img).unwrap().len(), b"P5\n16 16\n255\n".len() + 256);
}

#[test]
fn stand_in_generation() {
    let dir = TempDir::new().unwrap();
    let inst = p(&dir, "n.json");
    let series = p(&dir, "n.csv");
    let out = qcop(&["gen", "stand-in", "--budget", "3", "--months", "24", "--seed", "1", "--series", s(&series), "-o", s(&inst)]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_str(&std::fs::read_to_string(inst).unwrap()).unwrap();
    assert_eq!(v["nodes"].as_array().unwrap().len(), 14);
    assert_eq!(std::fs::read_to_string(series).unwrap().lines().count(), 25);
}

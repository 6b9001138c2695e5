use std::path::PathBuf;
use std::process::{Command, Output};

fn ustree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ustree")).args(args).output().expect("spawn ustree")
}

fn scratch(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR"));
    dir.join(name)
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn tree_round_trip() {
    let path = scratch("tree.json");
    let p = path.to_str().unwrap();
    assert!(ustree(&["gen", "tree", "--n", "80", "--delta", "4", "--portals", "5", "--seed", "7", "--out", p])
        .status
        .success());
    let out = ustree(&["ca", "tree", "--in", p, "--seed", "7", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["schema"], 1);
    assert!(v["input_sha256"].as_str().unwrap().starts_with("sha256:"));
    let beta = v["runs"][0]["check"]["realized_beta"].as_f64().unwrap();
    assert!(beta <= 4.0);
}

#[test]
fn reports_are_reproducible() {
    let path = scratch("pw.json");
    let p = path.to_str().unwrap();
    assert!(ustree(&["gen", "pathwidth", "--pw", "2", "--n", "50", "--out", p]).status.success());
    for args in [
        vec!["ca", "general", "--in", p, "--trials", "4", "--json"],
        vec!["ca", "pathwidth", "--in", p, "--json"],
        vec!["hierarchy", "--in", p, "--solver", "pathwidth", "--json"],
        vec!["net", "--in", p, "--delta", "3", "--json", "--dump-shifts"],
    ] {
        let a = ustree(&args);
        let b = ustree(&args);
        assert_eq!(a.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn oracle_and_lower_bound() {
    let path = scratch("lb.json");
    let p = path.to_str().unwrap();
    assert!(ustree(&["gen", "lower-bound", "--delta", "2", "--out", p]).status.success());
    let v = json(&ustree(&["oracle", "--in", p, "--json"]));
    assert_eq!(v["oracle"]["optimum"], 2.0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(ustree(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(ustree(&["ca", "tree"]).status.code(), Some(2));
    assert_eq!(ustree(&["oracle", "--in", "/nonexistent/file.json"]).status.code(), Some(2));
    let path = scratch("grid.json");
    let p = path.to_str().unwrap();
    assert!(ustree(&["gen", "grid", "--rows", "3", "--cols", "3", "--out", p]).status.success());
    // a grid is not a tree
    assert_eq!(ustree(&["ca", "tree", "--in", p]).status.code(), Some(2));
    assert_eq!(ustree(&["suite", "--criteria", "12"]).status.code(), Some(2));
}

#[test]
fn failed_check_exits_one() {
    let path = scratch("grid_net.json");
    let p = path.to_str().unwrap();
    assert!(ustree(&["gen", "grid", "--rows", "5", "--cols", "5", "--out", p]).status.success());
    // a sparsity target of one net vertex per ball cannot be met
    let out = ustree(&["net", "--in", p, "--delta", "3", "--alpha", "1", "--tau", "1", "--retries", "1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plain_edge_list_input() {
    let path = scratch("edges.txt");
    std::fs::write(&path, "4 3\n0 1 1\n1 2 2\n2 3 1\n").unwrap();
    let out = ustree(&["ust-scan", "--in", path.to_str().unwrap(), "--trials", "10", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["scan"]["worst_ratio"], 1.0);
}

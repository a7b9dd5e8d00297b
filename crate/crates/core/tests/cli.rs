mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use common::scenario_path;
use ivtp::vectors::{identity_vectors, merkle_vectors, to_file_json};

fn ivtp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ivtp")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn run_intersection(dir: &Path) {
    let scenario = scenario_path("intersection_table2");
    let o = ivtp(&["run", "--scenario", scenario.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn chain_arg(dir: &Path) -> String {
    dir.join("chain.bin").to_string_lossy().into_owned()
}

#[test]
fn run_writes_all_three_artifacts_and_reports_regenerate() {
    let dir = tempfile::tempdir().unwrap();
    run_intersection(dir.path());
    for f in ["chain.bin", "trace.jsonl", "report.json"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let o = ivtp(&["report", dir.path().to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(o.stdout, std::fs::read(dir.path().join("report.json")).unwrap());
}

#[test]
fn two_runs_produce_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_intersection(a.path());
    run_intersection(b.path());
    for f in ["chain.bin", "trace.jsonl", "report.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn inspect_queries_on_a_fresh_run() {
    let dir = tempfile::tempdir().unwrap();
    run_intersection(dir.path());
    let chain = chain_arg(dir.path());

    let o = ivtp(&["inspect", &chain, "validate"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("ok: 13 blocks"));

    assert_eq!(stdout(&ivtp(&["inspect", &chain, "balance", "IV-1"])), "IV-1 99500\n");
    assert_eq!(stdout(&ivtp(&["inspect", &chain, "balance", "IV-3"])), "IV-3 100500\n");

    let table = stdout(&ivtp(&["inspect", &chain, "comm-table"]));
    assert_eq!(
        table,
        "IV-1: IV-2, IV-3, IV-4\nIV-2: IV-1, IV-3, IV-4\nIV-3: IV-1, IV-2, IV-4\nIV-4: IV-1, IV-2, IV-3\n"
    );

    let history = stdout(&ivtp(&["inspect", &chain, "history", "IV-3"]));
    let kinds: Vec<String> = history
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    for k in ["Register", "Beacon", "Comm", "Reward", "Arbitration"] {
        assert!(kinds.iter().any(|x| x == k), "history lacks {k}");
    }
}

#[test]
fn inspect_accepts_hex_ids_and_prefixes_without_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    run_intersection(dir.path());
    let trace = std::fs::read_to_string(dir.path().join("trace.jsonl")).unwrap();
    let id = trace
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|r| r["kind"] == "vehicle" && r["vehicle"] == "IV-1")
        .unwrap()["detail"]["id"]
        .as_str()
        .unwrap()
        .to_string();
    let bare = tempfile::tempdir().unwrap();
    let chain: PathBuf = bare.path().join("chain.bin");
    std::fs::copy(dir.path().join("chain.bin"), &chain).unwrap();
    let chain = chain.to_string_lossy().into_owned();
    assert_eq!(stdout(&ivtp(&["inspect", &chain, "balance", &id])), format!("{id} 99500\n"));
    assert_eq!(stdout(&ivtp(&["inspect", &chain, "balance", &id[..10]])), format!("{id} 99500\n"));
    assert_eq!(ivtp(&["inspect", &chain, "balance", "IV-1"]).status.code(), Some(2));
}

#[test]
fn tampered_chain_fails_validation_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    run_intersection(dir.path());
    let path = dir.path().join("chain.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&path, bytes).unwrap();
    let o = ivtp(&["inspect", path.to_str().unwrap(), "validate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("at height"));
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    run_intersection(dir.path());
    let chain = chain_arg(dir.path());
    assert_eq!(ivtp(&["inspect", &chain, "balance", "IV-9"]).status.code(), Some(2));
    assert_eq!(ivtp(&["inspect", "/nonexistent/chain.bin", "validate"]).status.code(), Some(2));
    assert_eq!(ivtp(&["inspect", &chain]).status.code(), Some(2));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"vehicles": [{"alias": "A"}], "intersections": [{"id": "x", "participants": ["Z"], "arrival_ms": {"Z": 1}}]}"#).unwrap();
    let o = ivtp(&["run", "--scenario", bad.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("intersections[0].participants[0]"));
}

#[test]
fn committed_vectors_match_regenerated_ones() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../vectors");
    assert_eq!(std::fs::read_to_string(root.join("identity.json")).unwrap(), to_file_json(&identity_vectors()));
    assert_eq!(std::fs::read_to_string(root.join("merkle.json")).unwrap(), to_file_json(&merkle_vectors()));
    let o = ivtp(&["vectors"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), to_file_json(&identity_vectors()) + &to_file_json(&merkle_vectors()));
}

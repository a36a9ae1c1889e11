//! End-to-end runs of the `cpsu` binary.

mod common;

use std::path::Path;
use std::process::{Command, Output};

fn cpsu(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpsu"))
        .current_dir(dir)
        .args(["--threads", "1"])
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpsu(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for sub in ["simulate", "distill", "evaluate", "prune", "report"] {
        assert!(stdout(&o).contains(sub), "help lists {sub}");
    }
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--seed", "4", "simulate", "--policy", "energy", "--episodes", "2"];
    let a = cpsu(dir.path(), &args);
    let b = cpsu(dir.path(), &args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("policy energy"));
}

#[test]
fn simulate_writes_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpsu(dir.path(), &["--out", "run", "simulate", "--policy", "noop", "--dump-trajectories"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("run/trajectory_000.csv")).unwrap();
    // header, the reset state, then one row per step
    assert_eq!(csv.lines().count(), 1002);
}

#[test]
fn missing_policy_file_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpsu(dir.path(), &["simulate", "--policy", "mlp:nowhere.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
}

#[test]
fn bad_flags_and_zero_episodes_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cpsu(dir.path(), &["evaluate", "--policy", "noop", "--episodes", "0"]).status.code(), Some(1));
    assert_eq!(cpsu(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(cpsu(dir.path(), &["--config", "absent.json", "simulate"]).status.code(), Some(1));
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.json"), r#"{"sim": {"pole_length": -1.0}}"#).unwrap();
    assert_eq!(cpsu(dir.path(), &["--config", "c.json", "simulate"]).status.code(), Some(1));
    std::fs::write(dir.path().join("d.json"), r#"{"no_such_key": 1}"#).unwrap();
    assert_eq!(cpsu(dir.path(), &["--config", "d.json", "simulate"]).status.code(), Some(1));
}

#[test]
fn evaluate_noop_writes_zero_return_summary() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpsu(dir.path(), &["--out", "ev", "evaluate", "--policy", "noop", "--episodes", "3"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("ev/summary.json")).unwrap()).unwrap();
    assert_eq!(v["n"], 3);
    assert_eq!(v["mean"], 0.0);
    assert_eq!(v["zenith_episodes"], 0);
}

#[test]
fn prune_reports_reduction_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let tree = common::chain_tree(497, true);
    std::fs::write(dir.path().join("chain.json"), tree.to_json()).unwrap();
    let o = cpsu(dir.path(), &["prune", "--tree", "chain.json", "--output", "p1.json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("after:  497 decision nodes, 498 leaves, 2983 params"), "{text}");
    assert!(text.contains("36.2%"), "{text}");
    let o2 = cpsu(dir.path(), &["prune", "--tree", "p1.json", "--output", "p2.json"]);
    assert_eq!(o2.status.code(), Some(0));
    let p1 = std::fs::read(dir.path().join("p1.json")).unwrap();
    let p2 = std::fs::read(dir.path().join("p2.json")).unwrap();
    assert_eq!(p1, p2);
}

#[test]
fn prune_of_garbage_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.json"), "{\"version\": 1}").unwrap();
    assert_eq!(cpsu(dir.path(), &["prune", "--tree", "t.json"]).status.code(), Some(1));
}

#[test]
fn small_distill_then_report_and_reuse_of_trees() {
    let dir = tempfile::tempdir().unwrap();
    let o = cpsu(
        dir.path(),
        &[
            "--seed", "3", "--out", "run", "distill", "--iterations", "1", "--n-trees", "2", "--depth", "3",
            "--base-episodes", "3", "--eval-episodes", "2", "--report-episodes", "2",
        ],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let run = dir.path().join("run");
    let trees: Vec<_> = std::fs::read_dir(run.join("trees")).unwrap().collect();
    assert_eq!(trees.len(), 2);
    assert!(run.join("manifest.json").exists());

    let r = cpsu(dir.path(), &["--out", "run", "report", "--episodes", "2", "--bins", "4"]);
    assert_eq!(r.status.code(), Some(0), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["iterations.csv", "summary.json", "boxplot.csv"] {
        assert!(run.join("report").join(f).exists(), "{f}");
    }

    let e = cpsu(dir.path(), &["--out", "ev", "evaluate", "--policy", "tree:run/trees/iter00_tree00.json", "--episodes", "2"]);
    assert_eq!(e.status.code(), Some(0), "{}", String::from_utf8_lossy(&e.stderr));
}

#[test]
fn report_without_a_run_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cpsu(dir.path(), &["report", "--run", "nothing-here"]).status.code(), Some(1));
}

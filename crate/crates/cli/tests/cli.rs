use std::path::PathBuf;
use std::process::{Command, Output};

use carry_core::adversary::{AdversaryScript, Behavior};
use carry_core::harness::ScenarioConfig;
use carry_core::types::ProtocolVariant;

fn sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_carry-sim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn run_is_deterministic() {
    let args = ["run", "--seed", "7", "--views", "24", "--adversary", "tail-fork:2"];
    let a = sim(&args);
    let b = sim(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let m = stdout_json(&a);
    assert_eq!(m["seed"], 7);
    assert_eq!(m["actual_faults"], 1);
}

#[test]
fn run_writes_trace_and_metrics_files() {
    let trace = scratch("trace.txt");
    let metrics = scratch("metrics.json");
    let out = sim(&[
        "run",
        "--pacemaker",
        "timeout",
        "--trace",
        trace.to_str().unwrap(),
        "--output",
        metrics.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.lines().all(|l| l.split(' ').count() == 6));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();
    assert!(m["commits_total"].as_u64().unwrap() > 10);
}

#[test]
fn check_small_bounds_is_clean() {
    let out = sim(&["check", "--n", "4", "--views", "6", "--pre-gst-views", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = stdout_json(&out);
    assert_eq!(r["exhausted"], true);
    assert!(r["traces"].as_u64().unwrap() > 0);
}

#[test]
fn check_canary_fails() {
    let out = sim(&["check", "--n", "4", "--views", "6", "--pre-gst-views", "1", "--canary"]);
    assert_eq!(out.status.code(), Some(1));
    let r = stdout_json(&out);
    assert!(!r["violations"].as_array().unwrap().is_empty());
}

#[test]
fn sweep_worst_case_respects_bound_at_six() {
    let out = sim(&["sweep", "--rho", "1..8", "--worst-case", "--rotations", "8"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# carry-sim sweep seed=0"));
    assert_eq!(lines.next().unwrap(), "protocol,n,f,rho,placement,honest_proposals,forked,fraction");
    let mut sixes = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let rho: u64 = cols[3].parse().unwrap();
        let honest: u64 = cols[5].parse().unwrap();
        let forked: u64 = cols[6].parse().unwrap();
        if rho == 6 {
            sixes += 1;
            assert!(forked * 12 <= honest, "{line}");
        }
    }
    assert!(sixes > 0);
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(sim(&["run", "--rho", "0"]).status.code(), Some(2));
    assert_eq!(sim(&["check", "--n", "5"]).status.code(), Some(2));
    assert_eq!(sim(&["sweep", "--rho", "3..1"]).status.code(), Some(2));
    assert_eq!(sim(&["run", "--adversary", "gremlin"]).status.code(), Some(2));
    let bad = scratch("bad.toml");
    std::fs::write(&bad, "views = \"many\"\n").unwrap();
    assert_eq!(sim(&["run", "--scenario", bad.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn replay_matches_run() {
    let cfg = ScenarioConfig::honest(1, 2, ProtocolVariant::CarryTheTail, 20)
        .with_seed(11)
        .with_adversary(AdversaryScript::with_byzantine([1], Behavior::SkipBackward { target: None }));
    let path = scratch("replay.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let p = path.to_str().unwrap();
    let replay = sim(&["replay", "--scenario", p]);
    assert_eq!(replay.status.code(), Some(0), "{}", String::from_utf8_lossy(&replay.stderr));
    let run = sim(&["run", "--scenario", p]);
    assert_eq!(replay.stdout, run.stdout);
}

#[test]
fn adversary_file_is_accepted() {
    let path = scratch("adversary.toml");
    std::fs::write(
        &path,
        "byzantine = [3]\ndefault = \"silent\"\n\n[view.7]\nbehavior = \"tail-fork\"\n",
    )
    .unwrap();
    let out = sim(&["run", "--views", "16", "--adversary", path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["actual_faults"], 1);
}

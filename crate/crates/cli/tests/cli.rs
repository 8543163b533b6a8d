//! End-to-end checks of the binary: output lines, exit-code
//! discipline, trace round-trips and the config merge.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_silent-choir"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn simulate_prints_the_metrics_line() {
    let out = run(&[
        "simulate",
        "--protocol",
        "stealth",
        "--n",
        "5",
        "--f",
        "2",
        "--values",
        "11111",
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        stdout(&out).trim(),
        "messages=6 decide=3,3,3,3,3 halt=4,4,4,4,4"
    );

    let out = run(&[
        "simulate",
        "--protocol",
        "d2",
        "--n",
        "5",
        "--f",
        "2",
        "--values",
        "11111",
    ]);
    assert!(stdout(&out).starts_with("messages=10 decide=2,2,2,2,2"));

    let out = run(&[
        "simulate",
        "--protocol",
        "d15",
        "--n",
        "3",
        "--f",
        "2",
        "--values",
        "111",
    ]);
    assert!(stdout(&out).starts_with("messages=12 decide=1,1,1"));
}

#[test]
fn protocol_preconditions_exit_2() {
    let out = run(&[
        "simulate",
        "--protocol",
        "d1f1",
        "--n",
        "3",
        "--f",
        "2",
        "--values",
        "111",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("requires f=1"));

    let out = run(&[
        "simulate",
        "--protocol",
        "d15",
        "--n",
        "3",
        "--f",
        "2",
        "--values",
        "111",
        "--context",
        "gamma-f",
    ]);
    assert_eq!(code(&out), 2);

    let out = run(&[
        "simulate",
        "--protocol",
        "nope",
        "--n",
        "3",
        "--f",
        "1",
        "--values",
        "111",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_then_analyze_round_trips_the_metrics() {
    let dir = tempdir();
    let trace = dir.join("nice_stealth_3_1.json");
    let out = run(&[
        "simulate",
        "--protocol",
        "stealth",
        "--n",
        "3",
        "--f",
        "1",
        "--values",
        "111",
        "--out",
        trace.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let printed = stdout(&out);
    let messages = printed.split_whitespace().next().unwrap();
    assert_eq!(messages, "messages=3");

    let out = run(&["analyze", "--trace", trace.to_str().unwrap(), "--metrics"]);
    assert_eq!(code(&out), 0);
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["messages"], 3);

    let out = run(&[
        "analyze",
        "--trace",
        trace.to_str().unwrap(),
        "--choir",
        "2,1,3",
    ]);
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["satisfies_theorem"], true);
    assert_eq!(json["chain_exists"], false);
    assert_eq!(json["reach_set"], serde_json::json!([0, 1]));

    let out = run(&["analyze", "--trace", trace.to_str().unwrap(), "--rank", "1"]);
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["bound_holds"], true);
    assert_eq!(json["message_count"], 3);

    let out = run(&[
        "analyze",
        "--trace",
        trace.to_str().unwrap(),
        "--chain",
        "2,0,1,2",
    ]);
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json["chain_exists"], true);

    let out = run(&["diagram", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).matches('→').count(), 3);
}

#[test]
fn analyze_rejects_garbage_and_flag_combinations() {
    let dir = tempdir();
    let bad = dir.join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = run(&["analyze", "--trace", bad.to_str().unwrap(), "--metrics"]);
    assert_eq!(code(&out), 2);

    let trace = dir.join("t.json");
    run(&[
        "simulate",
        "--protocol",
        "stealth",
        "--n",
        "3",
        "--f",
        "1",
        "--values",
        "111",
        "--out",
        trace.to_str().unwrap(),
    ]);
    let out = run(&["analyze", "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "one analysis mode must be picked");
    let out = run(&[
        "analyze",
        "--trace",
        trace.to_str().unwrap(),
        "--metrics",
        "--rank",
        "1",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn knowledge_queries_print_the_verdict_and_scan_count() {
    let out = run(&[
        "knowledge",
        "--protocol",
        "stealth",
        "--n",
        "3",
        "--f",
        "1",
        "--values",
        "111",
        "--i",
        "2",
        "--m",
        "3",
        "--fact",
        "all1",
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("true"));
    assert!(lines.next().unwrap().starts_with("scanned="));

    let out = run(&[
        "knowledge",
        "--protocol",
        "stealth",
        "--n",
        "3",
        "--f",
        "1",
        "--values",
        "111",
        "--i",
        "2",
        "--m",
        "0",
        "--fact",
        "all1",
    ]);
    assert_eq!(stdout(&out).lines().next(), Some("false"));

    // Querying a crashed process is a usage error.
    let out = run(&[
        "knowledge",
        "--protocol",
        "stealth",
        "--n",
        "3",
        "--f",
        "1",
        "--values",
        "111",
        "--fail",
        "0:1:000",
        "--i",
        "0",
        "--m",
        "2",
        "--fact",
        "all1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains('⊥'));

    // A schedule outside the universe is reported, not executed.
    let out = run(&[
        "knowledge",
        "--protocol",
        "stealth",
        "--n",
        "3",
        "--f",
        "1",
        "--values",
        "111",
        "--fail",
        "0:6:000",
        "--i",
        "1",
        "--m",
        "1",
        "--fact",
        "all1",
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not a member"));
}

#[test]
fn verify_is_clean_for_real_protocols_and_catches_mutants() {
    let out = run(&[
        "verify",
        "--protocol",
        "stealth",
        "--n",
        "3",
        "--f",
        "1",
        "--suite",
        "all",
    ]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("total violations: 0"));

    let out = run(&[
        "verify",
        "--protocol",
        "mutant-commit0",
        "--n",
        "3",
        "--f",
        "1",
        "--suite",
        "knowledge",
    ]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("committed at 0 without knowing all1"));

    let out = run(&[
        "verify",
        "--protocol",
        "d1f1",
        "--n",
        "3",
        "--f",
        "1",
        "--suite",
        "ac",
        "--json",
    ]);
    assert_eq!(code(&out), 0);
    let json: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(json[0]["classes"][0]["violations"], 0);
}

#[test]
fn budget_overflow_exits_4() {
    let out = run(&[
        "verify",
        "--protocol",
        "stealth",
        "--n",
        "3",
        "--f",
        "1",
        "--suite",
        "ac",
        "--budget",
        "3",
    ]);
    assert_eq!(code(&out), 4);
    assert!(String::from_utf8_lossy(&out.stderr).contains("budget"));
}

#[test]
fn enumerate_spills_canonical_traces() {
    let dir = tempdir();
    let spill = dir.join("runs");
    let out = run(&[
        "enumerate",
        "--protocol",
        "d1f1",
        "--n",
        "3",
        "--f",
        "1",
        "--values",
        "111",
        "--spill",
        spill.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let count: usize = text.trim().strip_prefix("runs=").unwrap().parse().unwrap();
    let files: Vec<_> = std::fs::read_dir(&spill).unwrap().collect();
    assert_eq!(files.len(), count);
    assert!(count > 1);
}

#[test]
fn config_file_supplies_defaults_without_overriding_flags() {
    let dir = tempdir();
    let cfg = dir.join("sim.conf");
    std::fs::write(&cfg, "protocol=stealth\nn=5\nf=2\nvalues=11111\n").unwrap();
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).starts_with("messages=6"));

    // Explicit flags win over the file.
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--values",
        "11011",
    ]);
    assert_eq!(code(&out), 0);
    assert!(!stdout(&out).starts_with("messages=6"));
}

#[test]
fn consensus_check_runs_clean() {
    let out = run(&["consensus-check", "--n", "4", "--tolerance", "1"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("biased-to-1: ok"));
}

fn tempdir() -> std::path::PathBuf {
    let base = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!(
        "cli-{}-{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    std::fs::create_dir_all(&base).unwrap();
    base
}

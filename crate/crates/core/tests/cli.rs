//! End-to-end runs of the binary.

use std::path::Path;
use std::process::{Command, Output};

use multipress::model::FusionReport;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_multipress"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn synth(dir: &Path, per_class: &str) {
    let out = run(&["synth", "--seed", "7", "--per-class", per_class, "--out-dir", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn no_subcommand_prints_usage() {
    let out = run(&[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("Usage"));
}

#[test]
fn usage_and_config_errors_exit_3() {
    assert_eq!(run(&["evaluate", "--no-such-flag"]).status.code(), Some(3));
    assert_eq!(run(&["evaluate", "--tau", "1.5"]).status.code(), Some(3));
    assert_eq!(run(&["evaluate", "--lambda", "0.5,0.5,0.5"]).status.code(), Some(3));
    assert_eq!(run(&["evaluate"]).status.code(), Some(3));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[pipeline]\ntua = 0.5\n").unwrap();
    assert_eq!(run(&["evaluate", "--config", cfg.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, "3");
    synth(&b, "3");
    for f in ["dataset.jsonl", "kb.jsonl", "fixtures.jsonl", "manifest.json", "split.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let lines = std::fs::read_to_string(a.join("dataset.jsonl")).unwrap().lines().count();
    assert_eq!(lines, 24);
}

#[test]
fn classify_one_instance_prints_one_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("syn");
    synth(&data, "2");
    let out = run(&[
        "classify",
        "--backend",
        "mock",
        "--data-dir",
        data.to_str().unwrap(),
        "--id",
        "syn-health-0000",
    ]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1);
    let report: FusionReport = serde_json::from_str(stdout.trim()).unwrap();
    assert!(report.gate_weights.on_simplex());
}

#[test]
fn emitted_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("syn");
    synth(&data, "2");
    let emitted = tmp.path().join("effective.toml");
    let first = run(&[
        "evaluate",
        "--data-dir",
        data.to_str().unwrap(),
        "--seed",
        "7",
        "--top-k",
        "3",
        "--tau",
        "0.8",
        "--emit-config",
        emitted.to_str().unwrap(),
    ]);
    assert!(first.status.success());
    let text = std::fs::read_to_string(&emitted).unwrap();
    assert!(text.contains("top_k = 3"));
    let second = run(&["evaluate", "--config", emitted.to_str().unwrap()]);
    assert!(second.status.success());
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn kb_index_gives_the_same_table_as_raw_records() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("syn");
    synth(&data, "2");
    let index = tmp.path().join("kb.index.jsonl");
    let d = data.to_str().unwrap();
    let built = run(&["kb-build", "--seed", "7", "--input", &format!("{d}/kb.jsonl"), "--output", index.to_str().unwrap()]);
    assert!(built.status.success());
    let raw = run(&["evaluate", "--seed", "7", "--data-dir", d]);
    let indexed = run(&["evaluate", "--seed", "7", "--data-dir", d, "--kb", index.to_str().unwrap()]);
    assert!(raw.status.success() && indexed.status.success());
    assert_eq!(raw.stdout, indexed.stdout);
}

#[test]
fn failures_above_the_cap_exit_2_and_keep_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("syn");
    synth(&data, "2");
    let fixtures = data.join("fixtures.jsonl");
    let mut text = std::fs::read_to_string(&fixtures).unwrap();
    text.push_str("{\"kind\":\"fail\",\"instance\":\"syn-politics-0000\"}\n");
    std::fs::write(&fixtures, text).unwrap();
    let traces = tmp.path().join("traces");
    let out = run(&[
        "evaluate",
        "--data-dir",
        data.to_str().unwrap(),
        "--trace-dir",
        traces.to_str().unwrap(),
        "--emit-confusion",
    ]);
    // one of 16 instances is 6.25%, above the 5% default cap
    assert_eq!(out.status.code(), Some(2));
    let trace: serde_json::Value =
        serde_json::from_slice(&std::fs::read(traces.join("full/syn-politics-0000.trace.json")).unwrap()).unwrap();
    assert_eq!(trace["status"], "failed");
    assert!(traces.join("full/syn-economy-0000.trace.json").exists());
    assert!(traces.join("evaluate.record.json").exists());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("MultiPress (full)"));
}

#[test]
fn split_selects_the_test_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("syn");
    synth(&data, "5");
    let record = tmp.path().join("r.json");
    let out = run(&[
        "evaluate",
        "--data-dir",
        data.to_str().unwrap(),
        "--split",
        "test",
        "--record",
        record.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&record).unwrap()).unwrap();
    assert_eq!(r["runs"][0]["predictions"].as_array().unwrap().len(), 4);
}

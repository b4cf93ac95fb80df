mod common;

use std::path::Path;
use std::process::Command;

fn gpa(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_gpa")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_bench_is_repeatable() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = tmp.path().join("suite");
    gpa(&["gen", "--regime", "translation", "--count", "4", "--seed", "9", "--out", p(&suite)]);
    let (a, b) = (tmp.path().join("a.json"), tmp.path().join("b.json"));
    gpa(&["bench", "--suite", p(&suite), "--out", p(&a), "--seed", "2"]);
    gpa(&["bench", "--suite", p(&suite), "--out", p(&b), "--seed", "2"]);
    let strip = |f: &Path| {
        let r: gpa::harness::BenchReport = gpa::harness::read_json(f).unwrap();
        serde_json::to_string(&r.without_timing()).unwrap()
    };
    assert_eq!(strip(&a), strip(&b));
}

#[test]
fn ground_prints_json() {
    let tmp = tempfile::tempdir().unwrap();
    gpa(&["gen", "--seed", "5", "--out", p(tmp.path())]);
    let case = tmp.path().join("case-0000");
    let out = gpa(&[
        "ground",
        "--demo",
        p(&case.join("demo.json")),
        "--runtime",
        p(&case.join("runtime.json")),
        "--json",
    ]);
    let g: gpa::grounding::Grounding = serde_json::from_slice(&out.stdout).unwrap();
    assert!(g.result.fast_path);
}

#[test]
fn replay_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = common::fixture_dir();
    let report = tmp.path().join("report.json");
    gpa(&[
        "replay",
        "--workflow",
        p(&dir),
        "--env",
        p(&dir.join("scenario.json")),
        "--values",
        "subject=Hello",
        "--seed",
        "3",
        "--report",
        p(&report),
        "--no-precheck",
    ]);
    let r: gpa::runner::RunReport = gpa::harness::read_json(&report).unwrap();
    assert!(r.finished && !r.precheck);
    assert_eq!(r.steps[5].description, "Type text: Hello");
}

#[test]
fn bad_override_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gpa"))
        .args(["bench", "--suite", p(tmp.path()), "--out", "x.json", "--tau=-1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gate.tau"));
}

use std::path::Path;
use std::process::{Command, Output};

fn lookahead(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lookahead"))
        .args(args)
        .env_remove("LOOKAHEAD_SEED")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn prep_then_build_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let splits = tmp.path().join("splits");
    let out = lookahead(&[
        "prep",
        "--format",
        "synthetic",
        "--synthetic",
        "6,120",
        "--sizes",
        "40,40,10,30",
        "--seed",
        "3",
        "--out",
        path(&splits),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["label_count"], 6);
    assert!(splits.join("test.jsonl").exists());

    let examples = tmp.path().join("tasks.jsonl");
    let out = lookahead(&[
        "build-tasks",
        "--splits",
        path(&splits),
        "--tasks",
        "intent,gen3,reorder",
        "--k",
        "3",
        "--ratio",
        "0.5",
        "--budget",
        "20",
        "--out",
        path(&examples),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&examples).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let count = |task: &str| lines.iter().filter(|e| e["task"] == task).count();
    assert_eq!((count("intent"), count("reorder"), count("gen3")), (40, 10, 10));
}

#[test]
fn bad_arguments_fail_cleanly() {
    let out = lookahead(&["prep", "--format", "tarot", "--sizes", "1,1,1,1", "--out", "/nonexistent/x"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown corpus format"));

    let out = lookahead(&["eval", "--run", "/nonexistent/run", "--scenarios", "u9"]);
    assert!(!out.status.success());
}

//! Fixture files shared by the CLI integration and acceptance tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

pub fn mucs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mucs"))
        .args(args)
        .output()
        .expect("mucs binary runs")
}

pub fn write_jsonl(path: &Path, rows: &[Value]) {
    let text: String = rows.iter().map(|r| format!("{r}\n")).collect();
    std::fs::write(path, text).unwrap();
}

pub fn sentiment_reply(i: usize) -> String {
    if i.is_multiple_of(7) {
        r#"{"negative": 0.6, "neutral": 0.25, "positive": 0.15}"#.to_string()
    } else {
        let p = 0.7 + (i % 5) as f64 * 0.05;
        let rest = (1.0 - p) / 2.0;
        format!(r#"{{"negative": {rest}, "neutral": {rest}, "positive": {p}}}"#)
    }
}

/// `n` positive reviews; every seventh is mispredicted by the stub.
/// `reply` overrides the stub reply per item (`None` = no rule).
pub fn sentiment_fixture(dir: &Path, n: usize, reply: impl Fn(usize) -> Option<String>, default: Option<&str>) -> PathBuf {
    let data: Vec<Value> = (0..n)
        .map(|i| json!({"id": format!("r{i}"), "prompt": format!("Review item{i}: the film was fine overall"), "label": "positive"}))
        .collect();
    write_jsonl(&dir.join("data.jsonl"), &data);
    let rules: Vec<Value> = (0..n)
        .filter_map(|i| reply(i).map(|r| json!({"contains": format!("item{i}:"), "reply": r})))
        .collect();
    let table = json!({"rules": rules, "default": default});
    std::fs::write(dir.join("stub.json"), table.to_string()).unwrap();
    let cfg = json!({
        "dataset": "data.jsonl",
        "task": "sentiment",
        "stub": "stub.json",
        "methods": ["random", "gini", "entropy", "mcp", "maxp", "margin", "ats"],
        "seed": 7
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// Clone pairs answered with bare scalars; every fifth is mispredicted.
pub fn clone_fixture(dir: &Path, n: usize) -> PathBuf {
    let data: Vec<Value> = (0..n)
        .map(|i| json!({"id": format!("p{i}"), "prompt": format!("// pair{i}:\nint f() {{\n    return 1;\n}}"), "label": 1}))
        .collect();
    write_jsonl(&dir.join("data.jsonl"), &data);
    let rules: Vec<Value> = (0..n)
        .map(|i| {
            let s = if i % 5 == 0 { 0.3 } else { 0.6 + (i % 4) as f64 * 0.1 };
            json!({"contains": format!("pair{i}:"), "reply": format!("{s}")})
        })
        .collect();
    std::fs::write(dir.join("stub.json"), json!({"rules": rules}).to_string()).unwrap();
    let cfg = json!({"dataset": "data.jsonl", "task": "clone_detection", "stub": "stub.json"});
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

pub fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

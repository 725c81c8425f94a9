#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

pub mod schema;

pub const BIN: &str = env!("CARGO_BIN_EXE_lqgame");

pub fn lqgame(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("LQGAME_SEED")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn read_report(dir: &Path) -> Value {
    let text = std::fs::read_to_string(dir.join("report.json")).expect("report.json written");
    serde_json::from_str(&text).expect("report is JSON")
}

pub fn report_schema() -> Value {
    let text = include_str!("../../schema/report.schema.json");
    serde_json::from_str(text).expect("schema is JSON")
}

pub fn assert_valid(report: &Value) {
    let errors = schema::validate(&report_schema(), report);
    assert!(errors.is_empty(), "schema violations: {errors:#?}");
}

pub fn verdict(report: &Value, name: &str) -> bool {
    report["verdicts"]
        .as_array()
        .unwrap()
        .iter()
        .find(|v| v["name"] == name)
        .unwrap_or_else(|| panic!("no verdict `{name}`"))["passed"]
        .as_bool()
        .unwrap()
}

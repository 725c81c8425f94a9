mod common;

use std::fs;

use serde_json::{json, Value};
use tempfile::TempDir;

use common::{assert_valid, code, lqgame, read_report, schema, verdict};

fn run_in(dir: &TempDir, args: &[&str]) -> (i32, Value) {
    let out = dir.path().to_str().unwrap();
    let mut all: Vec<&str> = args.to_vec();
    all.extend(["--out", out]);
    let o = lqgame(&all);
    let report = read_report(dir.path());
    assert_valid(&report);
    assert_eq!(report["exit_code"], code(&o), "exit code matches the report");
    (code(&o), report)
}

#[test]
fn solve_regular_game_writes_every_artifact() {
    let dir = TempDir::new().unwrap();
    let (code, r) = run_in(&dir, &["solve", "example-6.3", "--x", "2"]);
    assert_eq!(code, 0);
    assert_eq!(r["regularity"]["regular"], true);
    assert_eq!(r["strategy"]["theta_start"], json!([-1.0, -1.0]));
    // V(t₀, x) = ½ P(t₀) x² with P ≡ 1.
    assert!((r["value"][0]["value"].as_f64().unwrap() - 2.0).abs() < 1e-10);
    for f in ["riccati.csv", "eta.csv", "strategy.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let strategy = fs::read_to_string(dir.path().join("strategy.csv")).unwrap();
    assert!(strategy.starts_with("s,Theta_11,Theta_21,v_1,v_2\n"), "{strategy}");
    let riccati = fs::read_to_string(dir.path().join("riccati.csv")).unwrap();
    assert_eq!(riccati.lines().count(), 1 + 1001);
}

#[test]
fn solve_refusal_still_writes_report() {
    let dir = TempDir::new().unwrap();
    let (code, r) = run_in(&dir, &["solve", "example-6.1", "--steps", "200"]);
    assert_eq!(code, 2);
    assert_eq!(r["regularity"]["regular"], false);
    assert_eq!(r["strategy"]["built"], false);
    assert!(!r["strategy"]["refusal"].as_str().unwrap().is_empty());
    assert!(dir.path().join("riccati.csv").exists());
    assert!(!dir.path().join("strategy.csv").exists());
}

#[test]
fn malformed_problem_file_exits_one() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, r#"{"horizon": {"t0": 0}}"#).unwrap();
    let o = lqgame(&["solve", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("$.horizon.T"), "{err}");

    assert_eq!(code(&lqgame(&["solve", "no-such-problem"])), 1);
    assert_eq!(code(&lqgame(&["solve", "example-6.3", "--steps", "abc"])), 1);
    assert_eq!(code(&lqgame(&["solve", "example-6.3", "--steps", "1"])), 1);
    assert_eq!(code(&lqgame(&["solve", "example-6.3", "--x", "1,2"])), 1);
}

#[test]
fn invalid_problem_lists_violations() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("asym.json");
    fs::write(
        &path,
        r#"{"horizon": {"t0": 0, "T": 1}, "dims": {"n": 2, "m1": 1},
            "A": {"const": [[0, 0], [0, 0]]}, "B1": {"const": [[1], [0]]},
            "R11": {"const": 1}, "G": [[1, 2], [0, 1]]}"#,
    )
    .unwrap();
    let o = lqgame(&["solve", path.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("violation"));
}

#[test]
fn riccati_blowup_exits_three() {
    // Ṗ = P², P(2) = −1 gives P = −1/(s − 1), which escapes at s = 1.
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("escape.json");
    fs::write(
        &path,
        r#"{"name": "escape", "horizon": {"t0": 0, "T": 2}, "dims": {"n": 1, "m1": 1},
            "A": {"const": [[0]]}, "B1": {"const": [[1]]}, "R11": {"const": 1},
            "G": [[-1]]}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = lqgame(&["solve", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    let r = read_report(&out);
    assert_valid(&r);
    assert_eq!(r["riccati"]["complete"], false);
    let at = r["riccati"]["blowup"].as_f64().unwrap();
    assert!((0.9..1.1).contains(&at), "blow-up at {at}");
}

#[test]
fn verify_both_solutions_and_a_non_solution() {
    let dir = TempDir::new().unwrap();
    let (c1, r1) = run_in(&dir, &["verify", "example-6.2", "--p", "const:-1"]);
    assert_eq!(c1, 0);
    assert!(r1["riccati"]["residual"].as_f64().unwrap() < 1e-8);
    assert_eq!(r1["regularity"]["regular"], true);

    let dir = TempDir::new().unwrap();
    let (c2, r2) = run_in(&dir, &["verify", "example-6.2", "--p", "poly:[-2,1]"]);
    assert_eq!(c2, 2);
    assert!(r2["riccati"]["residual"].as_f64().unwrap() < 1e-8);
    assert_eq!(r2["regularity"]["regular"], false);
    assert_eq!(r2["regularity"]["theta_l2"]["verdict"], "divergent");

    let dir = TempDir::new().unwrap();
    let (c3, r3) = run_in(&dir, &["verify", "example-6.2", "--p", "const:0"]);
    assert_eq!(c3, 2);
    assert!(r3["riccati"]["residual"].as_f64().unwrap() >= 0.1);
    assert!(!verdict(&r3, "solves_riccati"));
}

#[test]
fn verify_reads_candidate_files() {
    let dir = TempDir::new().unwrap();
    let cand = dir.path().join("p.json");
    fs::write(&cand, r#"{"rational": [[{"num": [0, 0, 1]}]]}"#).unwrap();
    let out = dir.path().join("out");
    let o = lqgame(&[
        "verify",
        "example-6.1",
        "--p",
        cand.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    let r = read_report(&out);
    assert!(verdict(&r, "solves_riccati"));
    assert_eq!(r["regularity"]["theta_l2"]["verdict"], "divergent");
}

#[test]
fn simulate_requires_a_regular_solve() {
    let dir = TempDir::new().unwrap();
    let (code, r) = run_in(
        &dir,
        &["simulate", "example-6.1", "saddle-test", "--steps", "200", "--paths", "10"],
    );
    assert_eq!(code, 2);
    assert!(r["simulation"].is_null());
}

#[test]
fn saddle_test_writes_paths() {
    let dir = TempDir::new().unwrap();
    let (code, r) = run_in(
        &dir,
        &["simulate", "example-6.3", "saddle-test", "--paths", "500", "--steps", "200"],
    );
    assert_eq!(code, 0);
    assert!(verdict(&r, "saddle_inequalities"));
    assert!(verdict(&r, "completion_of_squares"));
    let paths = fs::read_to_string(dir.path().join("paths.csv")).unwrap();
    let mut lines = paths.lines();
    assert_eq!(lines.next(), Some("path,X_1,payoff"));
    assert_eq!(lines.count(), 500);
}

#[test]
fn convexity_finds_player_two_witness() {
    let dir = TempDir::new().unwrap();
    let (_, r) = run_in(
        &dir,
        &["simulate", "example-6.3", "convexity", "--player", "2", "--paths", "2000", "--steps", "200"],
    );
    assert!(!verdict(&r, "concavity_player2"));
    let probe = &r["simulation"]["probes"][0];
    assert_eq!(probe["control"], "u = 1");
    assert_eq!(probe["violated"], true);
}

#[test]
fn divergence_leading_coefficient() {
    let dir = TempDir::new().unwrap();
    let (code, r) = run_in(
        &dir,
        &[
            "simulate", "example-6.3", "divergence", "--lambdas", "0,1,2,4", "--x", "1",
            "--paths", "4000", "--steps", "200",
        ],
    );
    assert_eq!(code, 0);
    let lead = &r["simulation"]["fit"]["leading"];
    let (mean, se) = (lead["mean"].as_f64().unwrap(), lead["stderr"].as_f64().unwrap());
    assert!((mean - 0.5).abs() < 3.0 * se + 0.05, "{mean} ± {se}");
    assert!(verdict(&r, "open_loop_upper_value_unbounded"));
}

#[test]
fn seed_flag_and_environment_agree() {
    let args = ["simulate", "example-6.3", "divergence", "--paths", "200", "--steps", "50", "--threads", "1"];
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let mut flag: Vec<&str> = args.to_vec();
    flag.extend(["--seed", "7", "--out", a.path().to_str().unwrap()]);
    lqgame(&flag);
    let o = std::process::Command::new(common::BIN)
        .args(args)
        .args(["--out", b.path().to_str().unwrap()])
        .env("LQGAME_SEED", "7")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let ra = fs::read(a.path().join("report.json")).unwrap();
    let rb = fs::read(b.path().join("report.json")).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(read_report(a.path())["config"]["seed"], 7);
}

#[test]
fn thread_count_does_not_change_results() {
    let run = |threads: &str| {
        let d = TempDir::new().unwrap();
        lqgame(&[
            "simulate", "example-6.2", "saddle-test", "--paths", "300", "--steps", "100",
            "--threads", threads, "--out", d.path().to_str().unwrap(),
        ]);
        let mut r = read_report(d.path());
        r["config"]["threads"] = json!(null);
        (r, fs::read(d.path().join("paths.csv")).unwrap())
    };
    let (r1, p1) = run("1");
    let (r4, p4) = run("4");
    assert_eq!(r1, r4);
    assert_eq!(p1, p4);
}

#[test]
fn stdout_carries_the_report_without_out() {
    let o = lqgame(&["solve", "example-6.2", "--steps", "100"]);
    assert_eq!(code(&o), 0);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_valid(&r);
    assert!(r["files"].as_array().unwrap().iter().any(|f| f == "riccati.csv"));
}

#[test]
fn schema_rejects_foreign_documents() {
    let s = common::report_schema();
    assert!(!schema::validate(&s, &json!({})).is_empty());
    let o = lqgame(&["solve", "example-6.3", "--steps", "50"]);
    let mut r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(schema::validate(&s, &r).is_empty());
    r["exit_code"] = json!(9);
    assert!(!schema::validate(&s, &r).is_empty());
    r["exit_code"] = json!(0);
    r["extra"] = json!(1);
    assert!(!schema::validate(&s, &r).is_empty());
}

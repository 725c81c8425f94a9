//! Acceptance criteria 1-8. Each test prints one `PASS`/`FAIL` line and
//! fails when its criterion does. Tests share a lock so the wall-clock
//! budgets are measured without interference.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the lines.

mod common;

use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

use lqgame::adjoint::{solve_eta, value_at};
use lqgame::matrix::{max_abs, pseudo_inverse, rank_cutoff, Mat};
use lqgame::problem::{assemble, builtin, MatrixFunction, StackedProblem, BUILTIN_NAMES};
use lqgame::riccati::{
    check_regularity, compare_regular_solutions, integrate_riccati, residual_verify,
    uniform_grid, Candidate, RegularityConfig, RiccatiSolution,
};
use lqgame::simulate::{
    convexity_probe, divergence_probe, path_summaries, saddle_test, stationarity_residual_batch,
    BrownianBatch, Perturbation,
};
use lqgame::strategy::{build_saddle, build_slq_optimal, ClosedLoopStrategy, Player};
use lqgame_cli::commands::{cmd_simulate, cmd_solve, Settings, SimulateMode, SimulateOptions};

static SERIAL: Mutex<()> = Mutex::new(());

/// Collects named checks and reports them as a single criterion line.
struct Criterion {
    id: u32,
    checks: Vec<(String, bool)>,
}

impl Criterion {
    fn new(id: u32) -> Self {
        Criterion { id, checks: Vec::new() }
    }

    fn check(&mut self, what: impl Into<String>, ok: bool) {
        self.checks.push((what.into(), ok));
    }

    fn within(&mut self, what: &str, elapsed: Duration, budget_secs: f64) {
        let secs = elapsed.as_secs_f64();
        self.check(format!("{what} {secs:.2}s < {budget_secs}s"), secs < budget_secs);
    }

    fn finish(self) {
        let passed = self.checks.iter().all(|c| c.1);
        let detail: Vec<String> = self
            .checks
            .iter()
            .map(|(w, ok)| format!("[{}] {w}", if *ok { "ok" } else { "x" }))
            .collect();
        println!(
            "criterion {}: {} {}",
            self.id,
            if passed { "PASS" } else { "FAIL" },
            detail.join("; ")
        );
        assert!(passed, "criterion {} failed", self.id);
    }
}

fn problem(name: &str) -> StackedProblem {
    assemble(&builtin(name).unwrap()).unwrap()
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn cfg() -> RegularityConfig {
    RegularityConfig::default()
}

/// Largest nodal error against a closed form, restricted to `s ≥ from`.
fn nodal_error(p: &RiccatiSolution, exact: impl Fn(f64) -> f64, from: f64) -> f64 {
    p.grid
        .iter()
        .zip(&p.values)
        .filter(|(s, _)| **s >= from - 1e-12)
        .map(|(s, v)| (v[(0, 0)] - exact(*s)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn criterion_1_example_6_1_oracle() {
    let _g = lock();
    let mut c = Criterion::new(1);
    let sp = problem("example-6.1");
    let t = Instant::now();
    let p = integrate_riccati(&sp, 10_000).unwrap();
    let err = nodal_error(&p, |s| s * s, 0.0);
    c.check(format!("max node error vs s² = {err:.3e} < 1e-6"), err < 1e-6);
    let reg = check_regularity(&p, &sp, None, &cfg()).unwrap();
    c.check(
        format!("theta_l2 divergent (got {:?})", reg.theta_l2),
        !reg.theta_l2.is_square_integrable(),
    );
    let settings = Settings { steps: 10_000, ..Settings::default() };
    let run = cmd_solve("example-6.1", &settings).unwrap();
    c.check(format!("cmd_solve exit code {} == 2", run.exit_code()), run.exit_code() == 2);
    c.within("runtime", t.elapsed(), 1.0);
    c.finish();
}

#[test]
fn criterion_2_example_6_2_oracle() {
    let _g = lock();
    let mut c = Criterion::new(2);
    let sp = problem("example-6.2");
    let t = Instant::now();
    // Cell midpoints of a 1000-step partition: 10³ nodes, none of them at
    // s = 1 where R + DᵀP₂D vanishes and the equation holds only as a limit.
    let grid = uniform_grid(0.0, 1.0, 1000);
    let mid: Vec<f64> = grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    assert_eq!(mid.len(), 1000);
    let p1 = MatrixFunction::constant(&Mat::from_element(1, 1, -1.0));
    let p2 = MatrixFunction::scalar(lqgame::problem::ScalarExpr::poly(vec![-2.0, 1.0]));
    for (name, f) in [("P1 = -1", &p1), ("P2 = s - 2", &p2)] {
        let r = residual_verify(Candidate::Function(f), &sp, &mid).unwrap();
        c.check(format!("{name} residual {r:.2e} < 1e-8"), r < 1e-8);
    }
    let sol1 = RiccatiSolution::from_function(p1, grid.clone()).unwrap();
    let sol2 = RiccatiSolution::from_function(p2, grid).unwrap();
    let adj1 = solve_eta(&sp, &sol1).unwrap();
    let r1 = check_regularity(&sol1, &sp, Some(&adj1), &cfg()).unwrap();
    let r2 = check_regularity(&sol2, &sp, None, &cfg()).unwrap();
    c.check("P1 regular", r1.regular);
    c.check("P2 not regular", !r2.regular);
    for x in [-1.0, 0.5, 2.0] {
        let v = value_at(&sp, &sol1, &adj1, 0.0, &[x]).unwrap();
        let want = -x * x / 2.0;
        c.check(format!("V(0, {x}) = {v} vs {want}"), (v - want).abs() < 1e-6);
    }
    c.within("runtime", t.elapsed(), 1.0);
    c.finish();
}

#[test]
fn criterion_3_example_6_3_oracle() {
    let _g = lock();
    let mut c = Criterion::new(3);
    let sp = problem("example-6.3");
    let t = Instant::now();
    let p = integrate_riccati(&sp, 1000).unwrap();
    let err = nodal_error(&p, |_| 1.0, 0.0);
    c.check(format!("P ≡ 1 error {err:.1e} ≤ 1e-10"), err <= 1e-10);
    let adj = solve_eta(&sp, &p).unwrap();
    let reg = check_regularity(&p, &sp, Some(&adj), &cfg()).unwrap();
    c.check(
        "sign report (R11 + D1ᵀPD1 ⪰ 0, R22 + D2ᵀPD2 ⪯ 0)",
        reg.sign_player1 && reg.sign_player2,
    );
    let st = build_saddle(&sp, &p, &adj, &cfg()).unwrap();
    let exact = st
        .theta
        .iter()
        .all(|th| th[(0, 0)] == -1.0 && th[(1, 0)] == -1.0);
    c.check("Θ = (−1, −1)ᵀ exactly at every node", exact);
    let x = 0.7;
    let batch = BrownianBatch::new(11, 10_000, p.grid.clone()).unwrap();
    let rows = path_summaries(&sp, &st, &[x], &batch).unwrap();
    let worst = rows.iter().map(|r| (r.terminal[0] - x).abs()).fold(0.0, f64::max);
    c.check(
        format!("X(1) = x on all {} paths (max deviation {worst:e})", rows.len()),
        worst <= f64::EPSILON * x,
    );
    c.within("runtime", t.elapsed(), 5.0);
    c.finish();
}

/// Completion-of-squares gap for a player-1 constant shift `delta` on
/// `example-6.3`: `½ ∫ (R₁₁ + D₁ᵀ P D₁) δ² ds` with `P ≡ 1`.
fn example_6_3_player1_gap(sp: &StackedProblem, grid: &[f64], delta: f64) -> f64 {
    let w = |s: f64| {
        let c = sp.at(s);
        c.r[(0, 0)] + c.d[(0, 0)] * c.d[(0, 0)]
    };
    let mut acc = 0.0;
    for k in 0..grid.len() - 1 {
        let h = grid[k + 1] - grid[k];
        acc += 0.5 * h * (w(grid[k]) + w(grid[k + 1])) * delta * delta;
    }
    0.5 * acc
}

#[test]
fn criterion_4_saddle_inequalities() {
    let _g = lock();
    let mut c = Criterion::new(4);
    let sp = problem("example-6.3");
    let t = Instant::now();
    let p = integrate_riccati(&sp, 1000).unwrap();
    let adj = solve_eta(&sp, &p).unwrap();
    let st = build_saddle(&sp, &p, &adj, &cfg()).unwrap();
    let konst = |v: f64| MatrixFunction::constant(&Mat::from_element(1, 1, v));
    let ramp = MatrixFunction::scalar(lqgame::problem::ScalarExpr::poly(vec![0.0, 1.0]));
    let perts = vec![
        Perturbation { player: Player::One, label: "p1 +0.5".into(), delta: konst(0.5) },
        Perturbation { player: Player::Two, label: "p2 +0.5".into(), delta: konst(0.5) },
        Perturbation { player: Player::Two, label: "p2 +s".into(), delta: ramp },
        Perturbation { player: Player::Two, label: "p2 -1".into(), delta: konst(-1.0) },
    ];
    let batch = BrownianBatch::new(42, 10_000, p.grid.clone()).unwrap();
    let rep = saddle_test(&sp, &p, &adj, &st, &perts, &[1.0], &batch, &cfg()).unwrap();
    let oracle = example_6_3_player1_gap(&sp, &p.grid, 0.5);
    for o in &rep.outcomes {
        let target = match o.player {
            Player::One => oracle,
            Player::Two => 0.0,
        };
        c.check(
            format!("{}: gap {} ± {} vs {target}", o.label, o.gap.mean, o.gap.stderr),
            o.gap.agrees_with(target),
        );
    }
    c.within("runtime", t.elapsed(), 30.0);
    c.finish();
}

#[test]
fn criterion_5_open_loop_divergence() {
    let _g = lock();
    let mut c = Criterion::new(5);
    let sp = problem("example-6.3");
    let t = Instant::now();
    let grid = uniform_grid(0.0, 1.0, 1000);
    let batch = BrownianBatch::new(5, 100_000, grid).unwrap();
    // Player 1 idle, player 2 plays the constant −λ.
    let family = |l: f64| -> lqgame::Result<MatrixFunction> {
        Ok(MatrixFunction::constant(&Mat::from_column_slice(2, 1, &[0.0, -l])))
    };
    let fit = divergence_probe(&sp, family, &[0.0, 1.0, 2.0, 4.0], &[1.0], &batch).unwrap();
    let lead = fit.leading.mean;
    c.check(
        format!("leading coefficient {lead} ± {} in 0.5 ± 0.05", fit.leading.stderr),
        (lead - 0.5).abs() <= 0.05,
    );
    let one = MatrixFunction::constant(&Mat::from_element(1, 1, 1.0));
    let probe = convexity_probe(&sp, Player::Two, &[one], &batch).unwrap();
    let e = &probe[0].estimate;
    c.check(
        format!("player-2 probe with u₂ ≡ 1: {} ± {} vs −0.5", e.mean, e.stderr),
        probe[0].violated && e.agrees_with(-0.5),
    );
    c.within("runtime", t.elapsed(), 60.0);
    c.finish();
}

#[test]
fn criterion_6_stationarity() {
    let _g = lock();
    let mut c = Criterion::new(6);
    let sp = problem("example-6.3");
    let residual = |steps: usize, zero: bool| {
        let p = integrate_riccati(&sp, steps).unwrap();
        let adj = solve_eta(&sp, &p).unwrap();
        let st = if zero {
            ClosedLoopStrategy::zero(p.grid.clone(), 1, 1, 1)
        } else {
            build_saddle(&sp, &p, &adj, &cfg()).unwrap()
        };
        let batch = BrownianBatch::new(3, 10_000, p.grid.clone()).unwrap();
        stationarity_residual_batch(&sp, &p, &adj, &st, &[1.0], &batch).unwrap().max
    };
    let coarse = residual(250, false);
    let fine = residual(1000, false);
    let zero = residual(1000, true);
    c.check(
        format!("refinement 250 → 1000: {coarse:e} → {fine:e} (≥ 2× reduction)"),
        fine <= coarse / 2.0,
    );
    c.check(
        format!("zero strategy {zero:e} ≥ 10 × saddle {fine:e}"),
        zero >= 10.0 * fine && zero > 0.0,
    );
    c.finish();
}

/// Penrose identities of `M†`, each normalized by its natural scale.
fn penrose_defects(m: &Mat, pinv: &Mat) -> [f64; 4] {
    let mp = m * pinv;
    let pm = pinv * m;
    let sm = max_abs(m).max(f64::MIN_POSITIVE);
    let sp = max_abs(pinv).max(f64::MIN_POSITIVE);
    [
        max_abs(&(&mp * m - m)) / sm,
        max_abs(&(&pm * pinv - pinv)) / sp,
        max_abs(&(mp.transpose() - &mp)),
        max_abs(&(pm.transpose() - &pm)),
    ]
}

fn random_matrix(rng: &mut ChaCha8Rng) -> Mat {
    let rows = rng.random_range(1..=8);
    let cols = rng.random_range(1..=8);
    let full = rows.min(cols);
    // Half the draws are rank deficient: a product through a thin inner
    // dimension.
    let inner = if rng.random_bool(0.5) { rng.random_range(0..=full) } else { full };
    let mut gauss = |r: usize, k: usize| {
        DMatrix::from_fn(r, k, |_, _| rng.sample::<f64, _>(StandardNormal))
    };
    if inner == full {
        gauss(rows, cols)
    } else {
        gauss(rows, inner) * gauss(inner, cols)
    }
}

fn penrose_suite(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0_f64;
    let mut failures = 0;
    for _ in 0..1000 {
        let m = random_matrix(&mut rng);
        let r = pseudo_inverse(&m, 0.0).unwrap();
        let sigma_max = r.singular_values.first().copied().unwrap_or(0.0);
        // Relative cutoff, matched to the normalized defects below. The
        // second identity is conditioned by σ_max/σ_min of the kept part.
        let rel = rank_cutoff(m.nrows(), m.ncols(), 1.0, 0.0);
        let kept_min = r.singular_values[..r.rank].last().copied().unwrap_or(1.0);
        let cond = if r.rank == 0 { 1.0 } else { sigma_max / kept_min };
        let d = penrose_defects(&m, &r.pinv);
        let bound = [10.0 * rel * cond, 10.0 * rel * cond * cond, 10.0 * rel * cond, 10.0 * rel * cond];
        let ratio = d.iter().zip(bound).map(|(x, b)| x / b).fold(0.0, f64::max);
        worst = worst.max(ratio);
        if ratio > 1.0 {
            failures += 1;
        }
    }
    c.check(
        format!("Penrose identities on 1000 random matrices (worst defect {worst:.2} × bound)"),
        failures == 0,
    );
}

#[test]
fn criterion_7_properties() {
    let _g = lock();
    let mut c = Criterion::new(7);
    penrose_suite(&mut c);

    for name in BUILTIN_NAMES {
        let sp = problem(name);
        let p = integrate_riccati(&sp, 1000).unwrap();
        let a = p.max_asymmetry();
        c.check(format!("{name} asymmetry {a:e} ≤ 1e-9"), a <= 1e-9);
    }

    // Step halving on `example-6.1`, errors measured on [0.5, 1] where the
    // solution is away from the singular point of the gain.
    let sp = problem("example-6.1");
    let errs: Vec<f64> = [40, 80, 160]
        .iter()
        .map(|&n| nodal_error(&integrate_riccati(&sp, n).unwrap(), |s| s * s, 0.5))
        .collect();
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        c.check(
            format!("example-6.1 halving ratio on [0.5, 1]: {ratio:.2} in [14, 18]"),
            (14.0..=18.0).contains(&ratio),
        );
    }

    // m₂ = 0: the stacked data are the player-1 blocks and the saddle
    // strategy is the optimal control of the one-player problem.
    let game = builtin("example-6.2").unwrap();
    let sp = assemble(&game).unwrap();
    let exact = uniform_grid(0.0, 1.0, 64).iter().all(|&s| {
        let k = sp.at(s);
        k.b == game.b1.eval(s)
            && k.d == game.d1.eval(s)
            && k.r == game.r11.eval(s)
            && k.s == game.s1.eval(s)
    });
    let p = integrate_riccati(&sp, 1000).unwrap();
    let adj = solve_eta(&sp, &p).unwrap();
    let a = build_saddle(&sp, &p, &adj, &cfg()).unwrap();
    let b = build_slq_optimal(&sp, &p, &adj, &cfg()).unwrap();
    c.check(
        "m2 = 0 stacking is the one-player problem, saddle == optimal control",
        exact && a.theta == b.theta && a.v == b.v,
    );

    let sp = problem("example-6.3");
    let sols: Vec<_> = [1000, 2000, 4000]
        .iter()
        .map(|&n| {
            let p = integrate_riccati(&sp, n).unwrap();
            let r = check_regularity(&p, &sp, None, &cfg()).unwrap();
            (p, r)
        })
        .collect();
    let mut gap = 0.0_f64;
    for i in 0..sols.len() {
        for j in i + 1..sols.len() {
            let d = compare_regular_solutions(&sols[i].0, &sols[i].1, &sols[j].0, &sols[j].1).unwrap();
            gap = gap.max(d);
        }
    }
    c.check(format!("regular solutions across steps agree to {gap:e} ≤ 1e-8"), gap <= 1e-8);
    c.finish();
}

#[test]
fn criterion_8_reproducibility() {
    let _g = lock();
    let mut c = Criterion::new(8);
    let run = || {
        let dir = TempDir::new().unwrap();
        let o = common::lqgame(&[
            "simulate", "example-6.3", "saddle-test", "--seed", "42", "--threads", "1",
            "--out", dir.path().to_str().unwrap(),
        ]);
        assert!(o.status.code().is_some());
        std::fs::read(dir.path().join("report.json")).unwrap()
    };
    let a = run();
    let b = run();
    c.check(format!("report.json byte-identical ({} bytes)", a.len()), a == b);
    let settings = Settings { seed: 42, threads: 1, ..Settings::default() };
    let lib = cmd_simulate("example-6.3", &SimulateOptions::new(SimulateMode::SaddleTest), &settings)
        .unwrap();
    c.check("library run matches the binary", lib.report.to_json().as_bytes() == a.as_slice());
    c.finish();
}

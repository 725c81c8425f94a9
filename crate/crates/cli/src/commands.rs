//! The `solve`, `verify` and `simulate` pipelines.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{bail, Context, Result};

use lqgame::adjoint::{solve_eta, value_at, AdjointSolution};
use lqgame::exec::with_threads;
use lqgame::matrix::{max_abs, Mat, DEFAULT_RANGE_TOL, DEFAULT_SIGN_TOL};
use lqgame::problem::{assemble, load_problem_source, MatrixFunction, ScalarExpr, StackedProblem};
use lqgame::riccati::{
    check_regularity, integrate_riccati, residual_verify, uniform_grid, Candidate,
    RegularityConfig, RiccatiSolution,
};
use lqgame::simulate::{
    convexity_probe, divergence_probe, path_summaries, saddle_test, stationarity_residual_batch,
    summaries_to_csv, BrownianBatch, MCEstimate, Perturbation, STDERR_MULTIPLE,
};
use lqgame::strategy::{build_saddle, ClosedLoopStrategy, Player};
use lqgame::{Error, Execution};

use crate::candidate::parse_candidate;
use crate::report::{
    exit, fmt_estimate, BatchInfo, ConfigInfo, ConvexityRecord, ProblemInfo, RiccatiInfo,
    RunReport, SimulationSummary, StrategyInfo, ValueSample,
};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 1;

/// A supplied candidate counts as a solution below this residual.
pub const RESIDUAL_TOL: f64 = 1e-6;

/// Stationarity tolerance per unit of initial-state size.
pub const STATIONARITY_TOL: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct Settings {
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    /// `0` uses every core, `1` runs sequentially.
    pub threads: usize,
    pub tol_range: f64,
    pub tol_sign: f64,
    /// Initial states; empty means the all-ones vector.
    pub x: Vec<Vec<f64>>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            steps: DEFAULT_STEPS,
            paths: DEFAULT_PATHS,
            seed: DEFAULT_SEED,
            threads: 0,
            tol_range: DEFAULT_RANGE_TOL,
            tol_sign: DEFAULT_SIGN_TOL,
            x: Vec::new(),
        }
    }
}

impl Settings {
    fn regularity(&self) -> RegularityConfig {
        RegularityConfig {
            range_tol: self.tol_range,
            sign_tol: self.tol_sign,
            ..RegularityConfig::default()
        }
    }

    fn execution(&self) -> Execution {
        if self.threads == 1 {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }

    fn states(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        if self.x.is_empty() {
            return Ok(vec![vec![1.0; n]]);
        }
        for x in &self.x {
            if x.len() != n {
                bail!("--x needs {n} component(s), got {}", x.len());
            }
        }
        Ok(self.x.clone())
    }

    fn config(&self, n: usize) -> Result<ConfigInfo> {
        if self.steps < 2 {
            bail!("--steps must be at least 2");
        }
        Ok(ConfigInfo {
            steps: self.steps,
            threads: self.threads,
            tol_range: self.tol_range,
            tol_sign: self.tol_sign,
            x: self.states(n)?,
            ..ConfigInfo::default()
        })
    }

    fn batch(&self, grid: Vec<f64>) -> Result<BrownianBatch> {
        Ok(BrownianBatch::new(self.seed, self.paths, grid)?.with_execution(self.execution()))
    }

    fn batch_info(&self) -> BatchInfo {
        BatchInfo {
            seed: self.seed,
            n_paths: self.paths,
            steps: self.steps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimulateMode {
    SaddleTest,
    Stationarity,
    Convexity,
    Divergence,
}

impl SimulateMode {
    pub fn name(self) -> &'static str {
        match self {
            SimulateMode::SaddleTest => "saddle-test",
            SimulateMode::Stationarity => "stationarity",
            SimulateMode::Convexity => "convexity",
            SimulateMode::Divergence => "divergence",
        }
    }
}

impl FromStr for SimulateMode {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "saddle-test" => SimulateMode::SaddleTest,
            "stationarity" => SimulateMode::Stationarity,
            "convexity" => SimulateMode::Convexity,
            "divergence" => SimulateMode::Divergence,
            _ => bail!("unknown mode `{s}`"),
        })
    }
}

#[derive(Clone, Debug)]
pub struct SimulateOptions {
    pub mode: SimulateMode,
    /// Probed player (convexity: both when unset; divergence: default 2).
    pub player: Option<usize>,
    pub lambdas: Vec<f64>,
}

impl SimulateOptions {
    pub fn new(mode: SimulateMode) -> Self {
        SimulateOptions {
            mode,
            player: None,
            lambdas: vec![0.0, 1.0, 2.0, 4.0],
        }
    }
}

/// A finished command: the report plus the CSV artifacts to write next to
/// it.
#[derive(Clone, Debug)]
pub struct Run {
    pub report: RunReport,
    pub artifacts: Vec<(&'static str, String)>,
}

impl Run {
    fn new(report: RunReport) -> Self {
        Run {
            report,
            artifacts: Vec::new(),
        }
    }

    fn attach(&mut self, name: &'static str, body: String) {
        self.report.files.push(name.to_string());
        self.artifacts.push((name, body));
    }

    pub fn exit_code(&self) -> i32 {
        self.report.exit_code
    }

    /// Writes the artifacts and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, body) in &self.artifacts {
            fs::write(dir.join(name), body).with_context(|| format!("writing {name}"))?;
        }
        fs::write(dir.join("report.json"), self.report.to_json()).context("writing report.json")?;
        Ok(())
    }
}

/// Exit code for an error that prevented a report from being produced.
pub fn exit_code_of(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::NotRegular(_)) => exit::NOT_REGULAR,
        Some(Error::NumericOverflow { .. } | Error::Divergent { .. }) => exit::NUMERIC,
        _ => exit::INVALID,
    }
}

fn load(source: &str) -> Result<StackedProblem> {
    let problem = load_problem_source(source)?;
    Ok(assemble(&problem)?)
}

fn value_samples(
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
    xs: &[Vec<f64>],
) -> Result<Vec<ValueSample>> {
    xs.iter()
        .map(|x| {
            Ok(ValueSample {
                x: x.clone(),
                value: value_at(sp, p, adj, sp.t0(), x)?,
            })
        })
        .collect()
}

/// Adjoint and saddle strategy of a regular solution, `None` on refusal.
type Audited = Option<(AdjointSolution, ClosedLoopStrategy)>;

/// Regularity audit, saddle construction and value samples for a complete
/// Riccati solution. Returns the strategy when one exists.
fn audit(
    run: &mut Run,
    sp: &StackedProblem,
    p: &RiccatiSolution,
    settings: &Settings,
) -> Result<Audited> {
    let cfg = settings.regularity();
    let adj = solve_eta(sp, p)?;
    run.attach("eta.csv", adj.to_csv());
    let reg = check_regularity(p, sp, Some(&adj), &cfg)?;
    run.report.verdict(
        "regular",
        reg.regular,
        reg.failure().unwrap_or_else(|| "all regularity conditions hold".into()),
    );
    run.report.regularity = Some(reg);
    match build_saddle(sp, p, &adj, &cfg) {
        Ok(st) => {
            run.report.strategy = Some(StrategyInfo::built(&st));
            run.attach("strategy.csv", st.to_csv());
            let xs = settings.states(sp.n())?;
            run.report.value = value_samples(sp, p, &adj, &xs)?;
            Ok(Some((adj, st)))
        }
        Err(Error::NotRegular(why)) => {
            run.report.strategy = Some(StrategyInfo::refused(why));
            run.report.fail_with(exit::NOT_REGULAR);
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

/// Integrates the Riccati equation and audits the result. `None` when the
/// integration blew up (the report then carries exit code 3).
fn solve_pipeline(
    run: &mut Run,
    sp: &StackedProblem,
    settings: &Settings,
) -> Result<Option<(RiccatiSolution, Audited)>> {
    let p = integrate_riccati(sp, settings.steps)?;
    run.report.riccati = Some(RiccatiInfo::of(&p));
    run.attach("riccati.csv", p.to_csv());
    if !p.is_complete() {
        let at = p.blowup.unwrap_or(f64::NAN);
        run.report
            .verdict("riccati_complete", false, format!("integration diverged at s = {at}"));
        run.report.fail_with(exit::NUMERIC);
        return Ok(None);
    }
    run.report.verdict("riccati_complete", true, "solution covers the horizon");
    let audited = audit(run, sp, &p, settings)?;
    Ok(Some((p, audited)))
}

/// Integrate, audit, build the saddle strategy and export everything.
pub fn cmd_solve(source: &str, settings: &Settings) -> Result<Run> {
    let sp = load(source)?;
    let config = settings.config(sp.n())?;
    with_threads(settings.threads, || {
        let mut run = Run::new(RunReport::new("solve", ProblemInfo::of(&sp), config));
        solve_pipeline(&mut run, &sp, settings)?;
        Ok(run)
    })
}

/// Residual and regularity audit of a supplied candidate `P`.
///
/// The residual is measured at the cell midpoints of the `steps` grid, which
/// keeps isolated points where `R + DᵀPD` is singular off the sample set.
pub fn cmd_verify(source: &str, candidate: &str, settings: &Settings) -> Result<Run> {
    let sp = load(source)?;
    let mut config = settings.config(sp.n())?;
    config.candidate = Some(candidate.to_string());
    let f = parse_candidate(candidate, sp.n())?;
    with_threads(settings.threads, || {
        let mut run = Run::new(RunReport::new("verify", ProblemInfo::of(&sp), config));
        let grid = uniform_grid(sp.t0(), sp.t_end(), settings.steps);
        let mid: Vec<f64> = grid.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let p = RiccatiSolution::from_function(f, grid)?;
        let residual = residual_verify(Candidate::Solution(&p), &sp, &mid)?;
        let terminal_gap = max_abs(&(&p.values[p.grid.len() - 1] - sp.terminal()));
        let mut info = RiccatiInfo::of(&p);
        info.residual = Some(residual);
        run.report.riccati = Some(info);
        run.attach("riccati.csv", p.to_csv());
        let solves = residual <= RESIDUAL_TOL && terminal_gap <= RESIDUAL_TOL;
        run.report.verdict(
            "solves_riccati",
            solves,
            format!("residual {residual:e}, terminal mismatch {terminal_gap:e}"),
        );
        if !solves {
            run.report.fail_with(exit::NOT_REGULAR);
        }
        audit(&mut run, &sp, &p, settings)?;
        Ok(run)
    })
}

/// Runs one Monte Carlo probe.
pub fn cmd_simulate(source: &str, opts: &SimulateOptions, settings: &Settings) -> Result<Run> {
    let sp = load(source)?;
    let mut config = settings.config(sp.n())?;
    config.mode = Some(opts.mode.name().to_string());
    config.paths = Some(settings.paths);
    config.seed = Some(settings.seed);
    if opts.mode == SimulateMode::Divergence {
        config.lambdas = Some(opts.lambdas.clone());
    }
    if let Some(i) = opts.player {
        Player::from_index(i)?;
        config.player = Some(i);
    }
    with_threads(settings.threads, || {
        let mut run = Run::new(RunReport::new("simulate", ProblemInfo::of(&sp), config));
        match opts.mode {
            SimulateMode::SaddleTest | SimulateMode::Stationarity => {
                let Some((p, audited)) = solve_pipeline(&mut run, &sp, settings)? else {
                    return Ok(run);
                };
                let Some((adj, st)) = audited else {
                    return Ok(run);
                };
                if opts.mode == SimulateMode::SaddleTest {
                    saddle_mode(&mut run, &sp, &p, &adj, &st, settings)?;
                } else {
                    stationarity_mode(&mut run, &sp, &p, &adj, &st, settings)?;
                }
            }
            SimulateMode::Convexity => convexity_mode(&mut run, &sp, opts, settings)?,
            SimulateMode::Divergence => divergence_mode(&mut run, &sp, opts, settings)?,
        }
        Ok(run)
    })
}

/// Constant `c` in every component of an `rows×1` control.
fn constant_control(rows: usize, c: f64) -> MatrixFunction {
    MatrixFunction::constant(&Mat::from_element(rows, 1, c))
}

/// `e(s)` in every component of an `rows×1` control.
fn expr_control(rows: usize, e: ScalarExpr) -> Result<MatrixFunction> {
    Ok(MatrixFunction::from_exprs(rows, 1, vec![e; rows])?)
}

fn player_dims(sp: &StackedProblem, player: Player) -> usize {
    match player {
        Player::One => sp.m1(),
        Player::Two => sp.m2(),
    }
}

fn default_perturbations(sp: &StackedProblem) -> Result<Vec<Perturbation>> {
    let mut out = Vec::new();
    for (player, dims) in [(Player::One, sp.m1()), (Player::Two, sp.m2())] {
        if dims == 0 {
            continue;
        }
        let i = player.index();
        out.push(Perturbation {
            player,
            label: format!("v{i} + 0.5"),
            delta: constant_control(dims, 0.5),
        });
        out.push(Perturbation {
            player,
            label: format!("v{i} + s"),
            delta: expr_control(dims, ScalarExpr::poly(vec![0.0, 1.0]))?,
        });
        out.push(Perturbation {
            player,
            label: format!("v{i} - 1"),
            delta: constant_control(dims, -1.0),
        });
    }
    Ok(out)
}

/// A sign was expected but the estimate cannot be told apart from zero.
fn inconclusive(e: &MCEstimate) -> bool {
    e.stderr > 0.0 && e.mean.abs() < STDERR_MULTIPLE * e.stderr
}

fn saddle_mode(
    run: &mut Run,
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
    st: &ClosedLoopStrategy,
    settings: &Settings,
) -> Result<()> {
    let x0 = settings.states(sp.n())?.remove(0);
    let batch = settings.batch(p.grid.clone())?;
    let perts = default_perturbations(sp)?;
    let rep = saddle_test(sp, p, adj, st, &perts, &x0, &batch, &settings.regularity())?;
    let value = value_at(sp, p, adj, sp.t0(), &x0)?;

    let ineq = rep.outcomes.iter().all(|o| o.inequality_ok);
    let pred = rep.outcomes.iter().all(|o| o.matches_prediction);
    let list = |f: &dyn Fn(&lqgame::simulate::PerturbationOutcome) -> bool| {
        rep.outcomes
            .iter()
            .filter(|o| !f(o))
            .map(|o| o.label.clone())
            .collect::<Vec<_>>()
            .join(", ")
    };
    run.report.verdict(
        "saddle_inequalities",
        ineq,
        if ineq { "all perturbations respect the saddle inequalities".into() } else { format!("violated by: {}", list(&|o| o.inequality_ok)) },
    );
    run.report.verdict(
        "completion_of_squares",
        pred,
        if pred { "gaps match the predicted quadratic".into() } else { format!("mismatch for: {}", list(&|o| o.matches_prediction)) },
    );
    let agrees = rep.baseline.agrees_with(value);
    run.report.verdict(
        "value_matches_payoff",
        agrees,
        format!("V = {value}, Monte Carlo {}", fmt_estimate(&rep.baseline)),
    );
    if rep
        .outcomes
        .iter()
        .any(|o| o.player == Player::One && o.predicted > 0.0 && inconclusive(&o.gap))
    {
        run.report.fail_with(exit::INCONCLUSIVE);
    }

    let rows = path_summaries(sp, st, &x0, &batch)?;
    run.attach("paths.csv", summaries_to_csv(&rows));
    run.report.simulation = Some(SimulationSummary::SaddleTest {
        batch: settings.batch_info(),
        x0,
        value,
        report: rep,
    });
    Ok(())
}

fn stationarity_mode(
    run: &mut Run,
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
    st: &ClosedLoopStrategy,
    settings: &Settings,
) -> Result<()> {
    let x0 = settings.states(sp.n())?.remove(0);
    let batch = settings.batch(p.grid.clone())?;
    let saddle = stationarity_residual_batch(sp, p, adj, st, &x0, &batch)?;
    let zero = ClosedLoopStrategy::zero(p.grid.clone(), sp.n(), sp.m1(), sp.m2());
    let zero_res = stationarity_residual_batch(sp, p, adj, &zero, &x0, &batch)?;
    let tolerance = STATIONARITY_TOL * (1.0 + x0.iter().fold(0.0_f64, |a, x| a.max(x.abs())));
    run.report.verdict(
        "saddle_stationary",
        saddle.max <= tolerance,
        format!("residual {} (tolerance {tolerance})", saddle.max),
    );
    run.report.verdict(
        "zero_strategy_separated",
        zero_res.max >= 10.0 * saddle.max && zero_res.max > tolerance,
        format!("zero-strategy residual {}", zero_res.max),
    );
    let rows = path_summaries(sp, st, &x0, &batch)?;
    run.attach("paths.csv", summaries_to_csv(&rows));
    run.report.simulation = Some(SimulationSummary::Stationarity {
        batch: settings.batch_info(),
        x0,
        saddle,
        zero_strategy: zero_res,
        tolerance,
    });
    Ok(())
}

fn convexity_mode(
    run: &mut Run,
    sp: &StackedProblem,
    opts: &SimulateOptions,
    settings: &Settings,
) -> Result<()> {
    let players: Vec<Player> = match opts.player {
        Some(i) => vec![Player::from_index(i)?],
        None => vec![Player::One, Player::Two],
    };
    let batch = settings.batch(uniform_grid(sp.t0(), sp.t_end(), settings.steps))?;
    let mut probes = Vec::new();
    let mut any_inconclusive = false;
    for player in players {
        let dims = player_dims(sp, player);
        if dims == 0 {
            continue;
        }
        let controls = [
            ("u = 1", constant_control(dims, 1.0)),
            ("u = s", expr_control(dims, ScalarExpr::poly(vec![0.0, 1.0]))?),
        ];
        let fns: Vec<MatrixFunction> = controls.iter().map(|c| c.1.clone()).collect();
        let outcomes = convexity_probe(sp, player, &fns, &batch)?;
        let violated: Vec<&str> = outcomes
            .iter()
            .filter(|o| o.violated)
            .map(|o| controls[o.index].0)
            .collect();
        any_inconclusive |= outcomes.iter().any(|o| inconclusive(&o.estimate));
        let (name, kind) = match player {
            Player::One => ("convexity_player1", "convexity"),
            Player::Two => ("concavity_player2", "concavity"),
        };
        run.report.verdict(
            name,
            violated.is_empty(),
            if violated.is_empty() {
                format!("no {kind} violation found")
            } else {
                format!("{kind} violated with {}", violated.join(", "))
            },
        );
        for o in outcomes {
            probes.push(ConvexityRecord {
                player: player.index(),
                control: controls[o.index].0.to_string(),
                outcome: o,
            });
        }
    }
    if any_inconclusive {
        run.report.fail_with(exit::INCONCLUSIVE);
    }
    run.report.simulation = Some(SimulationSummary::Convexity {
        batch: settings.batch_info(),
        probes,
    });
    Ok(())
}

fn divergence_mode(
    run: &mut Run,
    sp: &StackedProblem,
    opts: &SimulateOptions,
    settings: &Settings,
) -> Result<()> {
    let player = Player::from_index(opts.player.unwrap_or(2))?;
    let x0 = settings.states(sp.n())?.remove(0);
    let batch = settings.batch(uniform_grid(sp.t0(), sp.t_end(), settings.steps))?;
    let (m, m1) = (sp.m(), sp.m1());
    // The probed player plays the constant −λ, the other player 0.
    let family = |l: f64| -> lqgame::Result<MatrixFunction> {
        let u = Mat::from_fn(m, 1, |i, _| {
            let mine = match player {
                Player::One => i < m1,
                Player::Two => i >= m1,
            };
            if mine {
                -l
            } else {
                0.0
            }
        });
        Ok(MatrixFunction::constant(&u))
    };
    let fit = divergence_probe(sp, family, &opts.lambdas, &x0, &batch)?;
    let (name, side) = match player {
        Player::One => ("open_loop_lower_value_unbounded", "leading coefficient"),
        Player::Two => ("open_loop_upper_value_unbounded", "leading coefficient"),
    };
    // Player 1 minimizes, so its ramp drives the payoff to −∞ when the
    // leading coefficient is negative.
    let unbounded = match player {
        Player::Two => fit.unbounded,
        Player::One => fit.leading.mean < -(STDERR_MULTIPLE * fit.leading.stderr),
    };
    run.report.verdict(
        name,
        unbounded,
        format!("{side} {}", fmt_estimate(&fit.leading)),
    );
    if inconclusive(&fit.leading) {
        run.report.fail_with(exit::INCONCLUSIVE);
    }
    run.report.simulation = Some(SimulationSummary::Divergence {
        batch: settings.batch_info(),
        x0,
        player: player.index(),
        fit,
    });
    Ok(())
}

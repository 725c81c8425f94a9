//! Euler–Maruyama simulation under feedback laws and Monte Carlo probes.
//!
//! A single scalar Brownian motion drives the state. Path `i` draws its
//! increments from a ChaCha8 stream keyed by `(master_seed, i)`, so a path can
//! be regenerated on its own and every comparative run sees the same noise
//! (common random numbers). Per-path results are gathered in index order and
//! reduced sequentially, so estimates do not depend on the thread count.
//!
//! All payoffs use the trapezoid rule on the simulation grid and include the
//! factor ½ of the performance functional.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::adjoint::AdjointSolution;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::{pseudo_inverse, Mat, NodeStack};
use crate::problem::{MatrixFunction, StackedProblem};
use crate::riccati::{check_regularity, weight_and_coupling, RegularityConfig, RiccatiSolution};
use crate::strategy::{same_grid, AdjointMap, ClosedLoopStrategy, Player};

/// Statistical verdicts use this many standard errors.
pub const STDERR_MULTIPLE: f64 = 3.0;

/// Absorbs rounding when a standard error is exactly zero.
const ROUNDING_SLACK: f64 = 1e-12;

/// Seeded source of Brownian increments on a grid.
#[derive(Clone, Debug)]
pub struct BrownianBatch {
    pub master_seed: u64,
    pub n_paths: usize,
    grid: Arc<[f64]>,
    /// How paths are distributed over threads; never changes results.
    pub execution: Execution,
}

impl BrownianBatch {
    pub fn new(master_seed: u64, n_paths: usize, grid: Vec<f64>) -> Result<Self> {
        if n_paths == 0 {
            return Err(Error::invalid("a batch needs at least one path"));
        }
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid must have ≥ 2 strictly increasing nodes"));
        }
        Ok(BrownianBatch {
            master_seed,
            n_paths,
            grid: grid.into(),
            execution: Execution::default(),
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    /// Writes the `steps()` increments of path `path` into `out`.
    pub fn fill_increments(&self, path: usize, out: &mut [f64]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(path as u64);
        for (k, dw) in out.iter_mut().enumerate().take(self.steps()) {
            let z: f64 = rng.sample(StandardNormal);
            *dw = z * (self.grid[k + 1] - self.grid[k]).sqrt();
        }
    }

    pub fn increments(&self, path: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.steps()];
        self.fill_increments(path, &mut out);
        out
    }
}

/// One simulated trajectory with its realized control.
#[derive(Clone, Debug)]
pub struct StatePath {
    pub path_index: usize,
    grid: Arc<[f64]>,
    n: usize,
    m: usize,
    x: Vec<f64>,
    u: Vec<f64>,
}

impl StatePath {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.n..(k + 1) * self.n]
    }

    pub fn u_at(&self, k: usize) -> &[f64] {
        &self.u[k * self.m..(k + 1) * self.m]
    }

    pub fn terminal(&self) -> &[f64] {
        self.x_at(self.len() - 1)
    }
}

/// Sample mean with standard error `sd / √n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl MCEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return MCEstimate {
                mean: f64::NAN,
                stderr: f64::NAN,
                n_paths: 0,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        MCEstimate {
            mean,
            stderr: (var / n as f64).sqrt(),
            n_paths: n,
        }
    }

    /// `|mean − target| ≤ 3·stderr`.
    pub fn agrees_with(&self, target: f64) -> bool {
        (self.mean - target).abs() <= STDERR_MULTIPLE * self.stderr + ROUNDING_SLACK * (1.0 + target.abs())
    }
}

fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    let mut w = vec![0.0; n];
    for k in 0..n - 1 {
        let h = grid[k + 1] - grid[k];
        w[k] += 0.5 * h;
        w[k + 1] += 0.5 * h;
    }
    w
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_x0(sp: &StackedProblem, x0: &[f64]) -> Result<()> {
    if x0.len() != sp.n() {
        return Err(Error::invalid(format!(
            "initial state has {} components, expected {}",
            x0.len(),
            sp.n()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial state must be finite"));
    }
    Ok(())
}

/// Closed-loop coefficients of one strategy, precomputed per node.
///
/// With `u = ΘX + v` the dynamics are `dX = (Â X + b̂) ds + (Ĉ X + σ̂) dW` and
/// the running cost is `XᵀMX + 2lᵀX + c`.
struct Law {
    n: usize,
    m: usize,
    grid: Arc<[f64]>,
    weights: Vec<f64>,
    drift: NodeStack,
    drift_offset: NodeStack,
    diffusion: NodeStack,
    diffusion_offset: NodeStack,
    theta: NodeStack,
    v: NodeStack,
    cost_quad: NodeStack,
    cost_lin: NodeStack,
    cost_const: Vec<f64>,
    terminal: NodeStack,
    terminal_lin: Vec<f64>,
}

impl Law {
    /// `homogeneous` drops `b, σ, q, ρ, g`, leaving the variational system.
    fn new(
        sp: &StackedProblem,
        st: &ClosedLoopStrategy,
        batch: &BrownianBatch,
        homogeneous: bool,
    ) -> Result<Self> {
        if !same_grid(&st.grid, batch.grid()) {
            return Err(Error::invalid("strategy and batch grids differ"));
        }
        let (n, m) = (sp.n(), sp.m());
        if st.n() != n || st.m() != m || st.m1 != sp.m1() {
            return Err(Error::invalid("strategy dimensions do not match the problem"));
        }
        let len = st.grid.len();
        let mut mats: [Vec<Mat>; 8] = Default::default();
        let mut cost_const = Vec::with_capacity(len);
        for (k, &s) in st.grid.iter().enumerate() {
            let mut c = sp.at(s);
            if homogeneous {
                c.drift_offset.fill(0.0);
                c.diffusion_offset.fill(0.0);
                c.q_lin.fill(0.0);
                c.rho.fill(0.0);
            }
            let (th, v) = (&st.theta[k], &st.v[k]);
            let st_th = c.s.transpose() * th;
            let rv = &c.r * v;
            mats[0].push(&c.a + &c.b * th);
            mats[1].push(&c.b * v + &c.drift_offset);
            mats[2].push(&c.c + &c.d * th);
            mats[3].push(&c.d * v + &c.diffusion_offset);
            mats[4].push(th.clone());
            mats[5].push(v.clone());
            mats[6].push(&c.q + &st_th + st_th.transpose() + th.transpose() * &c.r * th);
            mats[7].push(&c.q_lin + c.s.transpose() * v + th.transpose() * (&rv + &c.rho));
            cost_const.push((v.transpose() * (&rv + &c.rho * 2.0))[(0, 0)]);
        }
        let [drift, drift_offset, diffusion, diffusion_offset, theta, v, cost_quad, cost_lin] = mats;
        let terminal_lin = if homogeneous {
            vec![0.0; n]
        } else {
            sp.terminal_lin().iter().cloned().collect()
        };
        Ok(Law {
            n,
            m,
            grid: batch.grid.clone(),
            weights: trapezoid_weights(&st.grid),
            drift: NodeStack::new(n, n, drift),
            drift_offset: NodeStack::new(n, 1, drift_offset),
            diffusion: NodeStack::new(n, n, diffusion),
            diffusion_offset: NodeStack::new(n, 1, diffusion_offset),
            theta: NodeStack::new(m, n, theta),
            v: NodeStack::new(m, 1, v),
            cost_quad: NodeStack::new(n, n, cost_quad),
            cost_lin: NodeStack::new(n, 1, cost_lin),
            cost_const,
            terminal: NodeStack::new(n, n, [sp.terminal().clone()]),
            terminal_lin,
        })
    }

    /// Simulates one path from `x0` with increments `dw`, leaving the
    /// terminal state in `x` and returning the payoff. When `record` is set
    /// the states and realized controls of every node are appended to it.
    fn run(
        &self,
        path: usize,
        x0: &[f64],
        dw: &[f64],
        x: &mut [f64],
        mut record: Option<(&mut Vec<f64>, &mut Vec<f64>)>,
    ) -> Result<f64> {
        let (n, m) = (self.n, self.m);
        let last = self.grid.len() - 1;
        x.copy_from_slice(x0);
        let mut drift = vec![0.0; n];
        let mut diff = vec![0.0; n];
        let mut u = vec![0.0; m];
        let mut running = 0.0;
        for k in 0..=last {
            running += self.weights[k]
                * (self.cost_quad.bilinear(k, x, x)
                    + 2.0 * dot(self.cost_lin.at(k), x)
                    + self.cost_const[k]);
            if let Some((xs, us)) = record.as_mut() {
                xs.extend_from_slice(x);
                u.copy_from_slice(self.v.at(k));
                self.theta.mul_add(k, x, &mut u);
                us.extend_from_slice(&u);
            }
            if k == last {
                break;
            }
            let h = self.grid[k + 1] - self.grid[k];
            drift.copy_from_slice(self.drift_offset.at(k));
            self.drift.mul_add(k, x, &mut drift);
            diff.copy_from_slice(self.diffusion_offset.at(k));
            self.diffusion.mul_add(k, x, &mut diff);
            let mut finite = true;
            for i in 0..n {
                x[i] += drift[i] * h + diff[i] * dw[k];
                finite &= x[i].is_finite();
            }
            if !finite {
                return Err(Error::Divergent {
                    path,
                    time: self.grid[k + 1],
                });
            }
        }
        let terminal = self.terminal.bilinear(0, x, x) + 2.0 * dot(&self.terminal_lin, x);
        Ok(0.5 * (running + terminal))
    }
}

/// Euler–Maruyama paths under the feedback law `u = ΘX + v`.
pub fn simulate_closed_loop(
    sp: &StackedProblem,
    st: &ClosedLoopStrategy,
    x0: &[f64],
    batch: &BrownianBatch,
) -> Result<Vec<StatePath>> {
    check_x0(sp, x0)?;
    let law = Law::new(sp, st, batch, false)?;
    batch
        .execution
        .try_map(batch.n_paths, |i| simulate_path(&law, batch, i, x0))
}

fn simulate_path(law: &Law, batch: &BrownianBatch, i: usize, x0: &[f64]) -> Result<StatePath> {
    let len = batch.grid.len();
    let dw = batch.increments(i);
    let mut x = vec![0.0; law.n];
    let mut xs = Vec::with_capacity(len * law.n);
    let mut us = Vec::with_capacity(len * law.m);
    law.run(i, x0, &dw, &mut x, Some((&mut xs, &mut us)))?;
    Ok(StatePath {
        path_index: i,
        grid: batch.grid.clone(),
        n: law.n,
        m: law.m,
        x: xs,
        u: us,
    })
}

/// Paths under a deterministic open-loop control `u(s)` (`m×1`).
pub fn simulate_open_loop(
    sp: &StackedProblem,
    u: &MatrixFunction,
    x0: &[f64],
    batch: &BrownianBatch,
) -> Result<Vec<StatePath>> {
    if u.shape() != (sp.m(), 1) {
        return Err(Error::invalid(format!(
            "open-loop control must be {}×1, got {:?}",
            sp.m(),
            u.shape()
        )));
    }
    let st = ClosedLoopStrategy::open_loop(batch.grid().to_vec(), sp.n(), sp.m1(), u)?;
    simulate_closed_loop(sp, &st, x0, batch)
}

/// Monte Carlo estimate of the performance functional from stored paths.
pub fn estimate_payoff(sp: &StackedProblem, paths: &[StatePath]) -> Result<MCEstimate> {
    let Some(first) = paths.first() else {
        return Err(Error::invalid("no paths to estimate from"));
    };
    let grid = first.grid();
    let (n, m) = (sp.n(), sp.m());
    if first.n != n || first.m != m {
        return Err(Error::invalid("path dimensions do not match the problem"));
    }
    let mut q = Vec::with_capacity(grid.len());
    let mut s = Vec::with_capacity(grid.len());
    let mut r = Vec::with_capacity(grid.len());
    let mut q_lin = Vec::with_capacity(grid.len());
    let mut rho = Vec::with_capacity(grid.len());
    for &t in grid {
        let c = sp.at(t);
        q.push(c.q);
        s.push(c.s);
        r.push(c.r);
        q_lin.push(c.q_lin);
        rho.push(c.rho);
    }
    let (q, s, r) = (
        NodeStack::new(n, n, q),
        NodeStack::new(m, n, s),
        NodeStack::new(m, m, r),
    );
    let (q_lin, rho) = (NodeStack::new(n, 1, q_lin), NodeStack::new(m, 1, rho));
    let g = NodeStack::new(n, n, [sp.terminal().clone()]);
    let g_lin: Vec<f64> = sp.terminal_lin().iter().cloned().collect();
    let w = trapezoid_weights(grid);
    let mut payoffs = Vec::with_capacity(paths.len());
    for p in paths {
        if !same_grid(p.grid(), grid) {
            return Err(Error::invalid("paths use different grids"));
        }
        let mut running = 0.0;
        for k in 0..grid.len() {
            let (x, u) = (p.x_at(k), p.u_at(k));
            running += w[k]
                * (q.bilinear(k, x, x)
                    + 2.0 * s.bilinear(k, u, x)
                    + r.bilinear(k, u, u)
                    + 2.0 * dot(q_lin.at(k), x)
                    + 2.0 * dot(rho.at(k), u));
        }
        let xt = p.terminal();
        payoffs.push(0.5 * (running + g.bilinear(0, xt, xt) + 2.0 * dot(&g_lin, xt)));
    }
    Ok(MCEstimate::from_samples(&payoffs))
}

/// Terminal state and payoff of one path.
#[derive(Clone, Debug, Serialize)]
pub struct PathSummary {
    pub path_index: usize,
    pub terminal: Vec<f64>,
    pub payoff: f64,
}

/// Per-path terminal states and payoffs without storing trajectories.
pub fn path_summaries(
    sp: &StackedProblem,
    st: &ClosedLoopStrategy,
    x0: &[f64],
    batch: &BrownianBatch,
) -> Result<Vec<PathSummary>> {
    check_x0(sp, x0)?;
    let law = Law::new(sp, st, batch, false)?;
    batch.execution.try_map(batch.n_paths, |i| {
        let dw = batch.increments(i);
        let mut x = vec![0.0; law.n];
        let payoff = law.run(i, x0, &dw, &mut x, None)?;
        Ok(PathSummary {
            path_index: i,
            terminal: x,
            payoff,
        })
    })
}

/// Monte Carlo estimate of the payoff under `st` without storing paths.
pub fn estimate_strategy_payoff(
    sp: &StackedProblem,
    st: &ClosedLoopStrategy,
    x0: &[f64],
    batch: &BrownianBatch,
) -> Result<MCEstimate> {
    let payoffs: Vec<f64> = path_summaries(sp, st, x0, batch)?
        .into_iter()
        .map(|p| p.payoff)
        .collect();
    Ok(MCEstimate::from_samples(&payoffs))
}

/// CSV with columns `path, X_1..X_n (terminal), payoff`.
pub fn summaries_to_csv(rows: &[PathSummary]) -> String {
    let n = rows.first().map_or(0, |r| r.terminal.len());
    let mut out = String::from("path");
    for i in 0..n {
        let _ = write!(out, ",X_{}", i + 1);
    }
    out.push_str(",payoff\n");
    for r in rows {
        let _ = write!(out, "{}", r.path_index);
        for x in &r.terminal {
            let _ = write!(out, ",{x}");
        }
        let _ = writeln!(out, ",{}", r.payoff);
    }
    out
}

/// JSON-friendly description of a batch run.
#[derive(Clone, Debug, Serialize)]
pub struct BatchSummary {
    pub master_seed: u64,
    pub n_paths: usize,
    pub t0: f64,
    pub t_end: f64,
    pub steps: usize,
    pub estimate: MCEstimate,
}

impl BatchSummary {
    pub fn new(batch: &BrownianBatch, estimate: MCEstimate) -> Self {
        BatchSummary {
            master_seed: batch.master_seed,
            n_paths: batch.n_paths,
            t0: batch.grid[0],
            t_end: batch.grid[batch.steps()],
            steps: batch.steps(),
            estimate,
        }
    }
}

/// A deterministic change `delta(s)` (`m_i×1`) of one player's feedforward
/// term.
#[derive(Clone, Debug)]
pub struct Perturbation {
    pub player: Player,
    pub label: String,
    pub delta: MatrixFunction,
}

#[derive(Clone, Debug, Serialize)]
pub struct PerturbationOutcome {
    pub player: Player,
    pub label: String,
    /// `J(perturbed) − J(saddle)` with common random numbers.
    pub gap: MCEstimate,
    /// `½∫⟨(R_ii + D_iᵀPD_i)δ, δ⟩ ds`.
    pub predicted: f64,
    /// Player 1: gap ≥ −3·stderr. Player 2: gap ≤ 3·stderr.
    pub inequality_ok: bool,
    pub matches_prediction: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SaddleReport {
    pub baseline: MCEstimate,
    pub outcomes: Vec<PerturbationOutcome>,
    pub passed: bool,
}

/// Checks the saddle inequalities by perturbing each player's feedforward
/// term against the saddle strategy `st`.
#[allow(clippy::too_many_arguments)]
pub fn saddle_test(
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
    st: &ClosedLoopStrategy,
    perturbations: &[Perturbation],
    x0: &[f64],
    batch: &BrownianBatch,
    cfg: &RegularityConfig,
) -> Result<SaddleReport> {
    check_x0(sp, x0)?;
    let report = check_regularity(p, sp, Some(adj), cfg)?;
    if let Some(why) = report.failure() {
        return Err(Error::NotRegular(why));
    }
    if !same_grid(&p.grid, batch.grid()) {
        return Err(Error::invalid("Riccati and batch grids differ"));
    }
    let base = Law::new(sp, st, batch, false)?;
    let mut laws = Vec::with_capacity(perturbations.len());
    let mut predicted = Vec::with_capacity(perturbations.len());
    let w = trapezoid_weights(batch.grid());
    let m1 = sp.m1();
    for pert in perturbations {
        laws.push(Law::new(sp, &st.perturbed(pert.player, &pert.delta)?, batch, false)?);
        let mut pred = 0.0;
        for (k, &s) in batch.grid().iter().enumerate() {
            let (weight, _) = weight_and_coupling(&sp.at(s), &p.values[k]);
            let (r0, len) = match pert.player {
                Player::One => (0, m1),
                Player::Two => (m1, sp.m2()),
            };
            let block = weight.view((r0, r0), (len, len));
            let d = pert.delta.eval(s);
            pred += w[k] * (d.transpose() * block * &d)[(0, 0)];
        }
        predicted.push(0.5 * pred);
    }
    let per_path = batch.execution.try_map(batch.n_paths, |i| {
        let dw = batch.increments(i);
        let mut x = vec![0.0; base.n];
        let j0 = base.run(i, x0, &dw, &mut x, None)?;
        let mut out = Vec::with_capacity(laws.len() + 1);
        out.push(j0);
        for law in &laws {
            out.push(law.run(i, x0, &dw, &mut x, None)? - j0);
        }
        Ok::<_, Error>(out)
    })?;
    let column = |j: usize| -> Vec<f64> { per_path.iter().map(|r| r[j]).collect() };
    let baseline = MCEstimate::from_samples(&column(0));
    let mut passed = true;
    let mut outcomes = Vec::with_capacity(perturbations.len());
    for (j, pert) in perturbations.iter().enumerate() {
        let gap = MCEstimate::from_samples(&column(j + 1));
        let slack = STDERR_MULTIPLE * gap.stderr + ROUNDING_SLACK;
        let inequality_ok = match pert.player {
            Player::One => gap.mean >= -slack,
            Player::Two => gap.mean <= slack,
        };
        let matches_prediction = gap.agrees_with(predicted[j]);
        passed &= inequality_ok && matches_prediction;
        outcomes.push(PerturbationOutcome {
            player: pert.player,
            label: pert.label.clone(),
            gap,
            predicted: predicted[j],
            inequality_ok,
            matches_prediction,
        });
    }
    Ok(SaddleReport {
        baseline,
        outcomes,
        passed,
    })
}

/// Largest path-mean norm of `BᵀY + DᵀZ + SX + Ru + ρ` over the grid.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct StationarityResidual {
    pub max: f64,
    /// Node where the maximum occurs.
    pub time: f64,
    pub n_paths: usize,
}

/// Accumulates path sums of `‖BᵀY + DᵀZ + SX + Ru + ρ‖` per node.
struct StationarityAccumulator<'a> {
    grid: &'a [f64],
    map: AdjointMap,
    bt: NodeStack,
    dt: NodeStack,
    s: NodeStack,
    r: NodeStack,
    rho: NodeStack,
    sums: Vec<f64>,
    count: usize,
}

impl<'a> StationarityAccumulator<'a> {
    fn new(
        sp: &StackedProblem,
        p: &'a RiccatiSolution,
        adj: &AdjointSolution,
        st: &ClosedLoopStrategy,
    ) -> Result<Self> {
        let map = AdjointMap::new(sp, p, adj, st)?;
        let (n, m) = (sp.n(), sp.m());
        let grid = &p.grid;
        let mut mats: [Vec<Mat>; 5] = Default::default();
        for &t in grid {
            let c = sp.at(t);
            mats[0].push(c.b.transpose());
            mats[1].push(c.d.transpose());
            mats[2].push(c.s);
            mats[3].push(c.r);
            mats[4].push(c.rho);
        }
        let [bt, dt, s, r, rho] = mats;
        Ok(StationarityAccumulator {
            grid,
            map,
            bt: NodeStack::new(m, n, bt),
            dt: NodeStack::new(m, n, dt),
            s: NodeStack::new(m, n, s),
            r: NodeStack::new(m, m, r),
            rho: NodeStack::new(m, 1, rho),
            sums: vec![0.0; grid.len()],
            count: 0,
        })
    }

    fn add(&mut self, path: &StatePath) -> Result<()> {
        if !same_grid(path.grid(), self.grid) {
            return Err(Error::invalid("path grid differs from the Riccati grid"));
        }
        let (n, m) = (path.n, path.m);
        let (mut y, mut z, mut res) = (vec![0.0; n], vec![0.0; n], vec![0.0; m]);
        for (k, sum) in self.sums.iter_mut().enumerate() {
            let x = path.x_at(k);
            self.map.eval(k, x, &mut y, &mut z);
            res.copy_from_slice(self.rho.at(k));
            self.bt.mul_add(k, &y, &mut res);
            self.dt.mul_add(k, &z, &mut res);
            self.s.mul_add(k, x, &mut res);
            self.r.mul_add(k, path.u_at(k), &mut res);
            *sum += dot(&res, &res).sqrt();
        }
        self.count += 1;
        Ok(())
    }

    fn finish(self) -> Result<StationarityResidual> {
        if self.count == 0 {
            return Err(Error::invalid("no paths supplied"));
        }
        let count = self.count as f64;
        let (k, max) = self
            .sums
            .iter()
            .map(|v| v / count)
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, v)| if v > best.1 { (k, v) } else { best });
        Ok(StationarityResidual {
            max,
            time: self.grid[k],
            n_paths: self.count,
        })
    }
}

/// Stationarity residual along paths simulated under `st`, with `Y, Z`
/// reconstructed from `P` and `η`.
pub fn stationarity_residual(
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
    st: &ClosedLoopStrategy,
    paths: &[StatePath],
) -> Result<StationarityResidual> {
    let mut acc = StationarityAccumulator::new(sp, p, adj, st)?;
    for path in paths {
        acc.add(path)?;
    }
    acc.finish()
}

/// Paths simulated per chunk when trajectories are not kept.
const CHUNK: usize = 512;

/// [`stationarity_residual`] for a whole batch, simulating paths in chunks
/// instead of storing them all.
pub fn stationarity_residual_batch(
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
    st: &ClosedLoopStrategy,
    x0: &[f64],
    batch: &BrownianBatch,
) -> Result<StationarityResidual> {
    check_x0(sp, x0)?;
    let law = Law::new(sp, st, batch, false)?;
    let mut acc = StationarityAccumulator::new(sp, p, adj, st)?;
    let mut start = 0;
    while start < batch.n_paths {
        let len = CHUNK.min(batch.n_paths - start);
        let paths = batch
            .execution
            .try_map(len, |j| simulate_path(&law, batch, start + j, x0))?;
        for path in &paths {
            acc.add(path)?;
        }
        start += len;
    }
    acc.finish()
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvexityOutcome {
    pub index: usize,
    /// `½(−1)^{i−1} E{⟨GX,X⟩ + ∫ ⟨QX,X⟩ + 2⟨S_iX,u_i⟩ + ⟨R_ii u_i,u_i⟩ ds}`
    /// for the variational state started at zero.
    pub estimate: MCEstimate,
    /// Estimate below −3·stderr.
    pub violated: bool,
}

/// Probes the convexity (player 1) or concavity (player 2) condition with
/// deterministic controls `controls[j]` (`m_i×1`) of the probed player.
pub fn convexity_probe(
    sp: &StackedProblem,
    player: Player,
    controls: &[MatrixFunction],
    batch: &BrownianBatch,
) -> Result<Vec<ConvexityOutcome>> {
    let zero = ClosedLoopStrategy::zero(batch.grid().to_vec(), sp.n(), sp.m1(), sp.m2());
    let x0 = vec![0.0; sp.n()];
    let sign = match player {
        Player::One => 1.0,
        Player::Two => -1.0,
    };
    let mut out = Vec::with_capacity(controls.len());
    for (index, u) in controls.iter().enumerate() {
        let law = Law::new(sp, &zero.perturbed(player, u)?, batch, true)?;
        let values = batch.execution.try_map(batch.n_paths, |i| {
            let dw = batch.increments(i);
            let mut x = vec![0.0; law.n];
            Ok::<_, Error>(sign * law.run(i, &x0, &dw, &mut x, None)?)
        })?;
        let estimate = MCEstimate::from_samples(&values);
        out.push(ConvexityOutcome {
            index,
            violated: estimate.mean < -(STDERR_MULTIPLE * estimate.stderr + ROUNDING_SLACK),
            estimate,
        });
    }
    Ok(out)
}

/// Least-squares fit `J(λ) ≈ aλ² + bλ + c` of the payoff along a family of
/// open-loop control pairs.
#[derive(Clone, Debug, Serialize)]
pub struct DivergenceFit {
    pub lambdas: Vec<f64>,
    pub estimates: Vec<MCEstimate>,
    pub leading: MCEstimate,
    pub linear: MCEstimate,
    pub constant: MCEstimate,
    /// Leading coefficient positive beyond 3 standard errors: the payoff is
    /// unbounded above along the family.
    pub unbounded: bool,
}

/// Fits the payoff along `family(λ)` (an `m×1` open-loop control) with
/// common random numbers across `lambdas`.
///
/// The fit is linear in the payoffs, so fitting each path and averaging
/// gives the fit of the means together with its standard error.
pub fn divergence_probe(
    sp: &StackedProblem,
    family: impl Fn(f64) -> Result<MatrixFunction>,
    lambdas: &[f64],
    x0: &[f64],
    batch: &BrownianBatch,
) -> Result<DivergenceFit> {
    check_x0(sp, x0)?;
    let mut distinct = lambdas.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 || lambdas.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid(
            "a quadratic fit needs at least 3 distinct finite λ values",
        ));
    }
    let design = Mat::from_fn(lambdas.len(), 3, |i, j| lambdas[i].powi(2 - j as i32));
    let fit = pseudo_inverse(&design, 0.0)?.pinv;
    let mut laws = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let u = family(l)?;
        if u.shape() != (sp.m(), 1) {
            return Err(Error::invalid(format!(
                "family must produce {}×1 controls, got {:?}",
                sp.m(),
                u.shape()
            )));
        }
        let st = ClosedLoopStrategy::open_loop(batch.grid().to_vec(), sp.n(), sp.m1(), &u)?;
        laws.push(Law::new(sp, &st, batch, false)?);
    }
    let per_path = batch.execution.try_map(batch.n_paths, |i| {
        let dw = batch.increments(i);
        let mut x = vec![0.0; sp.n()];
        laws.iter()
            .map(|law| law.run(i, x0, &dw, &mut x, None))
            .collect::<Result<Vec<f64>>>()
    })?;
    let estimates = (0..lambdas.len())
        .map(|j| MCEstimate::from_samples(&per_path.iter().map(|r| r[j]).collect::<Vec<_>>()))
        .collect();
    let coeff = |row: usize| -> MCEstimate {
        let xs: Vec<f64> = per_path
            .iter()
            .map(|js| js.iter().enumerate().map(|(j, v)| fit[(row, j)] * v).sum())
            .collect();
        MCEstimate::from_samples(&xs)
    };
    let (leading, linear, constant) = (coeff(0), coeff(1), coeff(2));
    Ok(DivergenceFit {
        lambdas: lambdas.to_vec(),
        estimates,
        unbounded: leading.mean > STDERR_MULTIPLE * leading.stderr + ROUNDING_SLACK,
        leading,
        linear,
        constant,
    })
}

//! Closed-loop saddle strategies and the adjoint pair along simulated paths.
//!
//! The saddle gains are
//!
//! ```text
//! Θ = −(R + DᵀPD)†(BᵀP + DᵀPC + S),
//! v = −(R + DᵀPD)†(Bᵀη + Dᵀζ + DᵀPσ + ρ),
//! ```
//!
//! the minimal-norm member of the family of saddle strategies (the free
//! parameters of the general representation are set to zero).

use std::fmt::Write as _;

use crate::adjoint::{forcing, AdjointSolution};
use crate::error::{Error, Result};
use crate::matrix::{max_abs, pinv_solve, symmetrize, Mat, NodeStack};
use crate::problem::{MatrixFunction, StackedProblem};
use crate::riccati::{
    check_regularity, riccati_rhs, weight_and_coupling, RegularityConfig, RegularityReport,
    RiccatiSolution,
};
use crate::simulate::StatePath;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Player {
    One,
    Two,
}

impl Player {
    pub fn index(self) -> usize {
        match self {
            Player::One => 1,
            Player::Two => 2,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            1 => Ok(Player::One),
            2 => Ok(Player::Two),
            _ => Err(Error::invalid(format!("player must be 1 or 2, got {i}"))),
        }
    }
}

/// Feedback law `u(s) = Θ(s)X(s) + v(s)` on a grid. Rows `0..m1` belong to
/// player 1, the rest to player 2.
#[derive(Clone, Debug)]
pub struct ClosedLoopStrategy {
    pub grid: Vec<f64>,
    pub m1: usize,
    /// `m×n` gains.
    pub theta: Vec<Mat>,
    /// `m×1` feedforward terms.
    pub v: Vec<Mat>,
}

impl ClosedLoopStrategy {
    /// `Θ = 0, v = 0`.
    pub fn zero(grid: Vec<f64>, n: usize, m1: usize, m2: usize) -> Self {
        let len = grid.len();
        ClosedLoopStrategy {
            grid,
            m1,
            theta: vec![Mat::zeros(m1 + m2, n); len],
            v: vec![Mat::zeros(m1 + m2, 1); len],
        }
    }

    /// Deterministic open-loop control `u(s)` (an `m×1` function) as a law
    /// with zero gain.
    pub fn open_loop(grid: Vec<f64>, n: usize, m1: usize, u: &MatrixFunction) -> Result<Self> {
        let (m, cols) = u.shape();
        if cols != 1 || m < m1 {
            return Err(Error::invalid(format!(
                "open-loop control must be an m×1 function with m ≥ {m1}, got {m}×{cols}"
            )));
        }
        let v = grid.iter().map(|&s| u.eval(s)).collect();
        Ok(ClosedLoopStrategy {
            theta: vec![Mat::zeros(m, n); grid.len()],
            v,
            m1,
            grid,
        })
    }

    pub fn n(&self) -> usize {
        self.theta[0].ncols()
    }

    pub fn m(&self) -> usize {
        self.theta[0].nrows()
    }

    pub fn m2(&self) -> usize {
        self.m() - self.m1
    }

    fn rows(&self, player: Player) -> (usize, usize) {
        match player {
            Player::One => (0, self.m1),
            Player::Two => (self.m1, self.m2()),
        }
    }

    /// `Θ_i(s_k)`.
    pub fn theta_of(&self, player: Player, k: usize) -> Mat {
        let (r0, len) = self.rows(player);
        self.theta[k].rows(r0, len).into_owned()
    }

    /// `v_i(s_k)`.
    pub fn v_of(&self, player: Player, k: usize) -> Mat {
        let (r0, len) = self.rows(player);
        self.v[k].rows(r0, len).into_owned()
    }

    /// Adds `delta(s)` (an `m_i×1` function) to player `i`'s feedforward
    /// term.
    pub fn perturbed(&self, player: Player, delta: &MatrixFunction) -> Result<Self> {
        let (r0, len) = self.rows(player);
        if delta.shape() != (len, 1) {
            return Err(Error::invalid(format!(
                "perturbation for player {} must be {len}×1, got {:?}",
                player.index(),
                delta.shape()
            )));
        }
        let mut out = self.clone();
        for (k, &s) in self.grid.iter().enumerate() {
            let d = delta.eval(s);
            let mut rows = out.v[k].rows_mut(r0, len);
            rows += d;
        }
        Ok(out)
    }

    /// CSV with columns `s, Theta_ij (row-major), v_i`.
    pub fn to_csv(&self) -> String {
        let (m, n) = (self.m(), self.n());
        let mut out = String::from("s");
        for i in 0..m {
            for j in 0..n {
                let _ = write!(out, ",Theta_{}{}", i + 1, j + 1);
            }
        }
        for i in 0..m {
            let _ = write!(out, ",v_{}", i + 1);
        }
        out.push('\n');
        for (k, s) in self.grid.iter().enumerate() {
            let _ = write!(out, "{s}");
            for i in 0..m {
                for j in 0..n {
                    let _ = write!(out, ",{}", self.theta[k][(i, j)]);
                }
            }
            for i in 0..m {
                let _ = write!(out, ",{}", self.v[k][(i, 0)]);
            }
            out.push('\n');
        }
        out
    }
}

fn check_grids(p: &RiccatiSolution, adj: &AdjointSolution) -> Result<()> {
    if !p.is_complete() {
        return Err(Error::invalid("Riccati solution does not cover the horizon"));
    }
    if p.grid.len() != adj.grid.len()
        || p.grid.iter().zip(&adj.grid).any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::invalid("Riccati and adjoint grids differ"));
    }
    Ok(())
}

/// Saddle gains without the regularity audit.
pub fn saddle_gains(
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
) -> Result<ClosedLoopStrategy> {
    check_grids(p, adj)?;
    let mut theta = Vec::with_capacity(p.grid.len());
    let mut v = Vec::with_capacity(p.grid.len());
    for (k, &s) in p.grid.iter().enumerate() {
        let c = sp.at(s);
        let (weight, coupling) = weight_and_coupling(&c, &p.values[k]);
        let w = forcing(&c, &p.values[k], &adj.eta[k], &adj.zeta[k]);
        theta.push(-pinv_solve(&weight, &coupling, 0.0)?);
        v.push(-pinv_solve(&weight, &w, 0.0)?);
    }
    Ok(ClosedLoopStrategy {
        grid: p.grid.clone(),
        m1: sp.m1(),
        theta,
        v,
    })
}

fn refuse_unless_regular(report: &RegularityReport) -> Result<()> {
    match report.failure() {
        None => Ok(()),
        Some(why) => Err(Error::NotRegular(why)),
    }
}

/// Closed-loop saddle strategy; refuses when `P` is not regular.
pub fn build_saddle(
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
    cfg: &RegularityConfig,
) -> Result<ClosedLoopStrategy> {
    check_grids(p, adj)?;
    refuse_unless_regular(&check_regularity(p, sp, Some(adj), cfg)?)?;
    saddle_gains(sp, p, adj)
}

/// Closed-loop optimal strategy of a one-player problem (`m₂ = 0`), where the
/// saddle construction reduces to the stochastic LQ optimal control.
pub fn build_slq_optimal(
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
    cfg: &RegularityConfig,
) -> Result<ClosedLoopStrategy> {
    if sp.m2() != 0 {
        return Err(Error::invalid(format!(
            "optimal control needs a one-player problem, m2 = {}",
            sp.m2()
        )));
    }
    build_saddle(sp, p, adj, cfg)
}

/// Largest nodal residuals of `(R+DᵀPD)Θ + (BᵀP+DᵀPC+S)` and
/// `(R+DᵀPD)v + (Bᵀη+Dᵀζ+DᵀPσ+ρ)`.
pub fn gain_identity_residuals(
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
    st: &ClosedLoopStrategy,
) -> Result<(f64, f64)> {
    check_grids(p, adj)?;
    if st.grid.len() != p.grid.len() {
        return Err(Error::invalid("strategy grid differs from the Riccati grid"));
    }
    let (mut gain, mut ff) = (0.0_f64, 0.0_f64);
    for (k, &s) in p.grid.iter().enumerate() {
        let c = sp.at(s);
        let (weight, coupling) = weight_and_coupling(&c, &p.values[k]);
        let w = forcing(&c, &p.values[k], &adj.eta[k], &adj.zeta[k]);
        let scale = 1.0 + max_abs(&p.values[k]);
        gain = gain.max(max_abs(&(&weight * &st.theta[k] + coupling)) / scale);
        ff = ff.max(max_abs(&(&weight * &st.v[k] + w)) / scale);
    }
    Ok((gain, ff))
}

/// Largest nodal residual of the Riccati equation rewritten with the gain,
///
/// ```text
/// Ṗ + P(A+BΘ) + (A+BΘ)ᵀP + (C+DΘ)ᵀP(C+DΘ) + ΘᵀRΘ + SᵀΘ + ΘᵀS + Q.
/// ```
///
/// `Ṗ` comes from the closed form when there is one and from the Riccati
/// right-hand side otherwise.
pub fn closed_loop_identity_residual(
    sp: &StackedProblem,
    p: &RiccatiSolution,
    st: &ClosedLoopStrategy,
) -> Result<f64> {
    if st.grid.len() != p.grid.len() {
        return Err(Error::invalid("strategy grid differs from the Riccati grid"));
    }
    let mut worst: f64 = 0.0;
    for (k, &s) in p.grid.iter().enumerate() {
        let c = sp.at(s);
        let pv = &p.values[k];
        let th = &st.theta[k];
        let dp = match p.exact_derivative(s) {
            Some(d) => d,
            None => riccati_rhs(sp, s, pv)?,
        };
        let acl = &c.a + &c.b * th;
        let ccl = &c.c + &c.d * th;
        let st_th = c.s.transpose() * th;
        let val = dp
            + pv * &acl
            + acl.transpose() * pv
            + ccl.transpose() * pv * &ccl
            + th.transpose() * &c.r * th
            + &st_th
            + st_th.transpose()
            + &c.q;
        worst = worst.max(max_abs(&symmetrize(&val)) / (1.0 + max_abs(pv)));
    }
    Ok(worst)
}

/// `Y = PX + η` and `Z = P(C+DΘ)X + PDv + Pσ + ζ` along one path.
#[derive(Clone, Debug)]
pub struct AdjointPath {
    pub path_index: usize,
    n: usize,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl AdjointPath {
    pub fn len(&self) -> usize {
        self.y.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn y_at(&self, k: usize) -> &[f64] {
        &self.y[k * self.n..(k + 1) * self.n]
    }

    pub fn z_at(&self, k: usize) -> &[f64] {
        &self.z[k * self.n..(k + 1) * self.n]
    }
}

/// Per-node affine maps `X ↦ Y` and `X ↦ Z` for one strategy, shared by
/// every path of a batch.
pub(crate) struct AdjointMap {
    n: usize,
    p: NodeStack,
    eta: NodeStack,
    z_gain: NodeStack,
    z_offset: NodeStack,
}

impl AdjointMap {
    pub(crate) fn new(
        sp: &StackedProblem,
        p: &RiccatiSolution,
        adj: &AdjointSolution,
        st: &ClosedLoopStrategy,
    ) -> Result<Self> {
        check_grids(p, adj)?;
        if !same_grid(&st.grid, &p.grid) {
            return Err(Error::invalid("strategy grid differs from the Riccati grid"));
        }
        let n = sp.n();
        let mut gains = Vec::with_capacity(p.grid.len());
        let mut offsets = Vec::with_capacity(p.grid.len());
        for (k, &s) in p.grid.iter().enumerate() {
            let c = sp.at(s);
            let pv = &p.values[k];
            gains.push(pv * (&c.c + &c.d * &st.theta[k]));
            offsets.push(pv * &c.d * &st.v[k] + pv * &c.diffusion_offset + &adj.zeta[k]);
        }
        Ok(AdjointMap {
            n,
            p: NodeStack::new(n, n, p.values.iter().cloned()),
            eta: NodeStack::new(n, 1, adj.eta.iter().cloned()),
            z_gain: NodeStack::new(n, n, gains),
            z_offset: NodeStack::new(n, 1, offsets),
        })
    }

    /// Writes `Y(s_k)` and `Z(s_k)` for state `x`.
    #[inline]
    pub(crate) fn eval(&self, k: usize, x: &[f64], y: &mut [f64], z: &mut [f64]) {
        y.copy_from_slice(self.eta.at(k));
        self.p.mul_add(k, x, y);
        z.copy_from_slice(self.z_offset.at(k));
        self.z_gain.mul_add(k, x, z);
    }

    pub(crate) fn apply(&self, path: &StatePath) -> Result<AdjointPath> {
        let n = self.n;
        let len = path.len();
        if len != self.p.nodes() {
            return Err(Error::invalid("path grid differs from the Riccati grid"));
        }
        let mut y = vec![0.0; len * n];
        let mut z = vec![0.0; len * n];
        for k in 0..len {
            self.eval(k, path.x_at(k), &mut y[k * n..(k + 1) * n], &mut z[k * n..(k + 1) * n]);
        }
        Ok(AdjointPath {
            path_index: path.path_index,
            n,
            y,
            z,
        })
    }
}

pub(crate) fn same_grid(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

/// Reconstructs the adjoint pair along a path simulated under `st`.
pub fn adjoint_along_path(
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
    path: &StatePath,
    st: &ClosedLoopStrategy,
) -> Result<AdjointPath> {
    if !same_grid(path.grid(), &p.grid) {
        return Err(Error::invalid(
            "path, strategy and Riccati solution must share one grid",
        ));
    }
    AdjointMap::new(sp, p, adj, st)?.apply(path)
}

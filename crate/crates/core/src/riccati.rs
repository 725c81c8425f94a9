//! The game Riccati equation
//!
//! ```text
//! Ṗ + PA + AᵀP + CᵀPC + Q − (PB + CᵀPD + Sᵀ)(R + DᵀPD)†(BᵀP + DᵀPC + S) = 0,
//! P(T) = G,
//! ```
//!
//! its backward RK4 integration, residual verification of supplied
//! candidates, and the regularity audit (range inclusion, square
//! integrability of the gain, sign conditions per player).

use std::fmt::Write as _;

use serde::Serialize;

use crate::adjoint::{check_eta_conditions, AdjointSolution};
use crate::error::{Error, Result};
use crate::ladder::{l2_ladder, L2Verdict, LadderConfig};
use crate::matrix::{
    asymmetry, definiteness, max_abs, min_singular_value, pinv_solve, range_inclusion, symmetrize,
    Definiteness, Mat, DEFAULT_RANGE_TOL, DEFAULT_SIGN_TOL,
};
use crate::problem::{locate, Coefficients, MatrixFunction, StackedProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolutionSource {
    Integrated,
    Supplied,
}

/// Symmetric trajectory `P(s)` on a grid.
#[derive(Clone, Debug)]
pub struct RiccatiSolution {
    pub grid: Vec<f64>,
    pub values: Vec<Mat>,
    pub source: SolutionSource,
    /// Time at which integration diverged; `grid` then only covers
    /// `[blowup, T]`.
    pub blowup: Option<f64>,
    exact: Option<MatrixFunction>,
}

impl RiccatiSolution {
    /// Supplied closed form, sampled on `grid`; evaluation and derivatives
    /// use the closed form.
    pub fn from_function(f: MatrixFunction, grid: Vec<f64>) -> Result<Self> {
        check_grid(&grid)?;
        let (r, c) = f.shape();
        if r != c {
            return Err(Error::invalid("candidate P must be square"));
        }
        let values = grid.iter().map(|&s| symmetrize(&f.eval(s))).collect();
        Ok(RiccatiSolution {
            grid,
            values,
            source: SolutionSource::Supplied,
            blowup: None,
            exact: Some(f),
        })
    }

    /// Supplied node values, linearly interpolated.
    pub fn from_samples(grid: Vec<f64>, values: Vec<Mat>) -> Result<Self> {
        check_grid(&grid)?;
        if grid.len() != values.len() {
            return Err(Error::invalid("one value per grid node expected"));
        }
        Ok(RiccatiSolution {
            grid,
            values,
            source: SolutionSource::Supplied,
            blowup: None,
            exact: None,
        })
    }

    pub fn n(&self) -> usize {
        self.values[0].nrows()
    }

    pub fn is_complete(&self) -> bool {
        self.blowup.is_none()
    }

    pub fn start(&self) -> f64 {
        self.grid[0]
    }

    pub fn end(&self) -> f64 {
        self.grid[self.grid.len() - 1]
    }

    /// `P(s)` for `s` inside the covered range.
    pub fn evaluate(&self, s: f64) -> Result<Mat> {
        let slack = 1e-12 * (1.0 + self.end().abs().max(self.start().abs()));
        if !(s >= self.start() - slack && s <= self.end() + slack) {
            return Err(Error::invalid(format!(
                "s = {s} outside [{}, {}]",
                self.start(),
                self.end()
            )));
        }
        if let Some(f) = &self.exact {
            return Ok(symmetrize(&f.eval(s)));
        }
        let (k, w) = locate(&self.grid, s);
        if w == 0.0 {
            Ok(self.values[k].clone())
        } else {
            Ok(&self.values[k] * (1.0 - w) + &self.values[k + 1] * w)
        }
    }

    pub(crate) fn has_closed_form(&self) -> bool {
        self.exact.is_some()
    }

    pub(crate) fn exact_derivative(&self, s: f64) -> Option<Mat> {
        self.exact
            .as_ref()
            .filter(|f| !f.is_sampled())
            .map(|f| symmetrize(&f.derivative(s)))
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.values.iter().map(asymmetry).fold(0.0, f64::max)
    }

    /// CSV with columns `s, P_11, P_12, …, P_nn` (row-major upper triangle).
    pub fn to_csv(&self) -> String {
        let n = self.n();
        let mut out = String::from("s");
        for i in 0..n {
            for j in i..n {
                let _ = write!(out, ",P_{}{}", i + 1, j + 1);
            }
        }
        out.push('\n');
        for (s, p) in self.grid.iter().zip(&self.values) {
            let _ = write!(out, "{s}");
            for i in 0..n {
                for j in i..n {
                    let _ = write!(out, ",{}", p[(i, j)]);
                }
            }
            out.push('\n');
        }
        out
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("grid must have ≥ 2 strictly increasing nodes"));
    }
    Ok(())
}

/// Uniform grid with `steps + 1` nodes, ending exactly at `t1`.
pub fn uniform_grid(t0: f64, t1: f64, steps: usize) -> Vec<f64> {
    let h = (t1 - t0) / steps as f64;
    (0..=steps)
        .map(|k| if k == steps { t1 } else { t0 + k as f64 * h })
        .collect()
}

/// `R + DᵀPD` and `BᵀP + DᵀPC + S` at one instant.
pub fn weight_and_coupling(c: &Coefficients, p: &Mat) -> (Mat, Mat) {
    let dt_p = c.d.transpose() * p;
    let weight = symmetrize(&(&c.r + &dt_p * &c.d));
    let coupling = c.b.transpose() * p + &dt_p * &c.c + &c.s;
    (weight, coupling)
}

/// Feedback gain `Θ = −(R + DᵀPD)†(BᵀP + DᵀPC + S)`.
pub fn feedback_gain(c: &Coefficients, p: &Mat) -> Result<Mat> {
    let (weight, coupling) = weight_and_coupling(c, p);
    Ok(-pinv_solve(&weight, &coupling, 0.0)?)
}

fn rhs_with(c: &Coefficients, p: &Mat, s: f64) -> Result<Mat> {
    let (weight, coupling) = weight_and_coupling(c, p);
    let solved = pinv_solve(&weight, &coupling, 0.0).map_err(|e| Error::NumericOverflow {
        time: s,
        what: e.to_string(),
    })?;
    let linear = p * &c.a + c.a.transpose() * p + c.c.transpose() * p * &c.c + &c.q;
    let out = -symmetrize(&(linear - coupling.transpose() * solved));
    if out.iter().all(|x| x.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NumericOverflow {
            time: s,
            what: "non-finite Riccati right-hand side".into(),
        })
    }
}

/// `dP/ds` at `(s, P)`.
pub fn riccati_rhs(sp: &StackedProblem, s: f64, p: &Mat) -> Result<Mat> {
    rhs_with(&sp.at(s), p, s)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct IntegrationOptions {
    /// Integration stops once `‖P‖_max` exceeds this.
    pub cap: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions { cap: 1e12 }
    }
}

/// Backward classical RK4 from `P(T) = G` on a uniform grid.
///
/// Divergence (cap exceeded or a failing right-hand side) is not an error:
/// the returned solution has `blowup` set and only covers `[blowup, T]`.
pub fn integrate_riccati(sp: &StackedProblem, steps: usize) -> Result<RiccatiSolution> {
    integrate_riccati_with(sp, steps, &IntegrationOptions::default())
}

pub fn integrate_riccati_with(
    sp: &StackedProblem,
    steps: usize,
    opts: &IntegrationOptions,
) -> Result<RiccatiSolution> {
    if steps < 2 {
        return Err(Error::invalid("integrate_riccati needs at least 2 steps"));
    }
    let grid = uniform_grid(sp.t0(), sp.t_end(), steps);
    let mut values = vec![Mat::zeros(0, 0); steps + 1];
    let mut p = symmetrize(sp.terminal());
    values[steps] = p.clone();
    let mut blowup = None;
    for k in (0..steps).rev() {
        let (s1, s0) = (grid[k + 1], grid[k]);
        match rk4_step(sp, s1, s0, &p) {
            Ok(next) if max_abs(&next) <= opts.cap => {
                p = next;
                values[k] = p.clone();
            }
            Ok(_) => {
                blowup = Some(s0);
                values.drain(..=k);
                break;
            }
            Err(Error::NumericOverflow { .. }) => {
                blowup = Some(s0);
                values.drain(..=k);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let grid = grid[grid.len() - values.len()..].to_vec();
    Ok(RiccatiSolution {
        grid,
        values,
        source: SolutionSource::Integrated,
        blowup,
        exact: None,
    })
}

fn rk4_step(sp: &StackedProblem, s1: f64, s0: f64, p: &Mat) -> Result<Mat> {
    let h = s1 - s0;
    let mid = s1 - 0.5 * h;
    let cm = sp.at(mid);
    let k1 = riccati_rhs(sp, s1, p)?;
    let k2 = rhs_with(&cm, &(p - &k1 * (0.5 * h)), mid)?;
    let k3 = rhs_with(&cm, &(p - &k2 * (0.5 * h)), mid)?;
    let k4 = riccati_rhs(sp, s0, &(p - &k3 * h))?;
    let next = p - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    Ok(symmetrize(&next))
}

/// A trajectory whose Riccati residual can be measured.
#[derive(Clone, Copy, Debug)]
pub enum Candidate<'a> {
    Solution(&'a RiccatiSolution),
    Function(&'a MatrixFunction),
}

impl Candidate<'_> {
    fn value(&self, s: f64) -> Result<Mat> {
        match self {
            Candidate::Solution(sol) => sol.evaluate(s),
            Candidate::Function(f) => Ok(symmetrize(&f.eval(s))),
        }
    }

    fn exact_derivative(&self, s: f64) -> Option<Mat> {
        match self {
            Candidate::Solution(sol) => sol.exact_derivative(s),
            Candidate::Function(f) if !f.is_sampled() => Some(symmetrize(&f.derivative(s))),
            Candidate::Function(_) => None,
        }
    }
}

/// Three-point derivative at node `k` of a (possibly nonuniform) grid.
fn fd_derivative(grid: &[f64], vals: &[Mat], k: usize) -> Mat {
    let n = grid.len();
    let (i0, i1, i2) = if k == 0 {
        (0, 1, 2)
    } else if k == n - 1 {
        (n - 3, n - 2, n - 1)
    } else {
        (k - 1, k, k + 1)
    };
    let (x0, x1, x2, x) = (grid[i0], grid[i1], grid[i2], grid[k]);
    // Derivative of the Lagrange interpolant through three nodes.
    let w0 = (2.0 * x - x1 - x2) / ((x0 - x1) * (x0 - x2));
    let w1 = (2.0 * x - x0 - x2) / ((x1 - x0) * (x1 - x2));
    let w2 = (2.0 * x - x0 - x1) / ((x2 - x0) * (x2 - x1));
    &vals[i0] * w0 + &vals[i1] * w1 + &vals[i2] * w2
}

/// Maximum nodal residual `‖Ṗ − rhs(P)‖_max` of a candidate on `grid`.
///
/// `Ṗ` is exact for rational closed forms and a three-point finite
/// difference on `grid` otherwise (one-sided at the ends).
pub fn residual_verify(candidate: Candidate<'_>, sp: &StackedProblem, grid: &[f64]) -> Result<f64> {
    if grid.len() < 3 {
        return Err(Error::invalid("residual grid needs at least 3 nodes"));
    }
    let vals = grid
        .iter()
        .map(|&s| candidate.value(s))
        .collect::<Result<Vec<_>>>()?;
    let mut worst: f64 = 0.0;
    for (k, &s) in grid.iter().enumerate() {
        let dp = match candidate.exact_derivative(s) {
            Some(d) => d,
            None => fd_derivative(grid, &vals, k),
        };
        let rhs = riccati_rhs(sp, s, &vals[k])?;
        worst = worst.max(max_abs(&(dp - rhs)));
    }
    Ok(worst)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RegularityConfig {
    pub range_tol: f64,
    pub sign_tol: f64,
    pub ladder: LadderConfig,
}

impl Default for RegularityConfig {
    fn default() -> Self {
        RegularityConfig {
            range_tol: DEFAULT_RANGE_TOL,
            sign_tol: DEFAULT_SIGN_TOL,
            ladder: LadderConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RegularityReport {
    /// Range inclusion per grid node.
    #[serde(skip)]
    pub range_nodes: Vec<bool>,
    pub range_ok: bool,
    pub range_failures: usize,
    pub theta_l2: L2Verdict,
    /// `R₁₁ + D₁ᵀPD₁ ⪰ 0` at every node.
    pub sign_player1: bool,
    /// `R₂₂ + D₂ᵀPD₂ ⪯ 0` at every node (vacuous for one player).
    pub sign_player2: bool,
    /// `None` when no adjoint solution was supplied.
    pub eta_range_ok: Option<bool>,
    pub v_l2_ok: Option<bool>,
    /// The solution covers the whole horizon.
    pub complete: bool,
    pub regular: bool,
    pub warnings: Vec<String>,
}

impl RegularityReport {
    /// Human-readable reason the solution is not regular.
    pub fn failure(&self) -> Option<String> {
        if self.regular {
            return None;
        }
        let mut why = Vec::new();
        if !self.complete {
            why.push("Riccati solution does not cover the horizon".to_string());
        }
        if !self.range_ok {
            why.push(format!(
                "range condition fails at {} node(s)",
                self.range_failures
            ));
        }
        if let L2Verdict::Divergent { location, .. } = self.theta_l2 {
            why.push(format!("feedback gain is not square integrable near s = {location}"));
        }
        if !self.sign_player1 {
            why.push("R11 + D1ᵀPD1 is not positive semidefinite".into());
        }
        if !self.sign_player2 {
            why.push("R22 + D2ᵀPD2 is not negative semidefinite".into());
        }
        if self.eta_range_ok == Some(false) {
            why.push("adjoint range condition fails".into());
        }
        if self.v_l2_ok == Some(false) {
            why.push("feedforward term is not square integrable".into());
        }
        Some(why.join("; "))
    }
}

/// Audits the regularity conditions of a Riccati solution.
pub fn check_regularity(
    p: &RiccatiSolution,
    sp: &StackedProblem,
    adj: Option<&AdjointSolution>,
    cfg: &RegularityConfig,
) -> Result<RegularityReport> {
    let m1 = sp.m1();
    let m2 = sp.m2();
    let mut range_nodes = Vec::with_capacity(p.grid.len());
    let mut sigma = Vec::with_capacity(p.grid.len());
    let mut sign1 = true;
    let mut sign2 = true;
    let mut warnings = Vec::new();
    for (&s, pv) in p.grid.iter().zip(&p.values) {
        let c = sp.at(s);
        let (weight, coupling) = weight_and_coupling(&c, pv);
        range_nodes.push(range_inclusion(&coupling, &weight, cfg.range_tol)?);
        sigma.push(min_singular_value(&weight));
        let w11 = weight.view((0, 0), (m1, m1)).into_owned();
        sign1 &= definiteness(&w11, Definiteness::Psd, cfg.sign_tol)?;
        if m2 > 0 {
            let w22 = weight.view((m1, m1), (m2, m2)).into_owned();
            sign2 &= definiteness(&w22, Definiteness::Nsd, cfg.sign_tol)?;
        }
    }
    let theta_sq = |s: f64| -> f64 {
        match p.evaluate(s).and_then(|pv| feedback_gain(&sp.at(s), &pv)) {
            Ok(th) => th.norm_squared(),
            Err(_) => f64::INFINITY,
        }
    };
    let theta_l2 = l2_ladder(&p.grid, &sigma, theta_sq, &cfg.ladder);

    let (eta_range_ok, v_l2_ok) = match adj {
        Some(a) => {
            let (r, v) = check_eta_conditions(sp, p, a, cfg)?;
            (Some(r), Some(v))
        }
        None => {
            warnings.push("no adjoint solution supplied; eta conditions skipped".to_string());
            (None, None)
        }
    };
    let complete = p.is_complete();
    if !complete {
        warnings.push(format!(
            "integration diverged at s = {}",
            p.blowup.unwrap_or(f64::NAN)
        ));
    }
    let range_failures = range_nodes.iter().filter(|ok| !**ok).count();
    let range_ok = range_failures == 0;
    let regular = complete
        && range_ok
        && theta_l2.is_square_integrable()
        && sign1
        && sign2
        && eta_range_ok.unwrap_or(true)
        && v_l2_ok.unwrap_or(true);
    Ok(RegularityReport {
        range_nodes,
        range_ok,
        range_failures,
        theta_l2,
        sign_player1: sign1,
        sign_player2: sign2,
        eta_range_ok,
        v_l2_ok,
        complete,
        regular,
        warnings,
    })
}

/// Largest nodal deviation between two regular solutions of the same
/// problem, compared on both grids. Regular solutions are unique, so this
/// should be at integration-error level.
pub fn compare_regular_solutions(
    pa: &RiccatiSolution,
    ra: &RegularityReport,
    pb: &RiccatiSolution,
    rb: &RegularityReport,
) -> Result<f64> {
    if !(ra.regular && rb.regular) {
        return Err(Error::invalid(
            "uniqueness comparison needs two regular solutions",
        ));
    }
    let mut worst: f64 = 0.0;
    for (x, y) in [(pa, pb), (pb, pa)] {
        for (&s, v) in x.grid.iter().zip(&x.values) {
            worst = worst.max(max_abs(&(v - y.evaluate(s)?)));
        }
    }
    Ok(worst)
}

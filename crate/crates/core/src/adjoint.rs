//! Adjoint equation and value function for deterministic inhomogeneous data.
//!
//! With deterministic `b, σ, q, ρ, g` the backward equation for `(η, ζ)` has
//! `ζ ≡ 0` and `η` solves the linear ODE
//!
//! ```text
//! η̇ = −{ (Aᵀ − K Bᵀ) η + (Cᵀ − K Dᵀ)(ζ + Pσ) − K ρ + P b + q },   η(T) = g,
//! K = (PB + CᵀPD + Sᵀ)(R + DᵀPD)†.
//! ```
//!
//! `ζ` is kept in every formula so that lifting the restriction only means
//! replacing [`solve_eta`].

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ladder::l2_ladder;
use crate::matrix::{min_singular_value, pinv_solve, range_inclusion, Mat};
use crate::problem::{locate, Coefficients, StackedProblem};
use crate::riccati::{riccati_rhs, weight_and_coupling, RegularityConfig, RiccatiSolution};

#[derive(Clone, Debug)]
pub struct AdjointSolution {
    pub grid: Vec<f64>,
    /// `η(s_k)` as `n×1` columns.
    pub eta: Vec<Mat>,
    /// Identically zero under deterministic data.
    pub zeta: Vec<Mat>,
}

impl AdjointSolution {
    pub fn eta_at(&self, s: f64) -> Mat {
        interp(&self.grid, &self.eta, s)
    }

    pub fn zeta_at(&self, s: f64) -> Mat {
        interp(&self.grid, &self.zeta, s)
    }

    /// CSV with columns `s, eta_1..eta_n`.
    pub fn to_csv(&self) -> String {
        let n = self.eta[0].nrows();
        let mut out = String::from("s");
        for i in 0..n {
            let _ = write!(out, ",eta_{}", i + 1);
        }
        out.push('\n');
        for (s, e) in self.grid.iter().zip(&self.eta) {
            let _ = write!(out, "{s}");
            for i in 0..n {
                let _ = write!(out, ",{}", e[(i, 0)]);
            }
            out.push('\n');
        }
        out
    }
}

fn interp(grid: &[f64], vals: &[Mat], s: f64) -> Mat {
    let (k, w) = locate(grid, s);
    if w == 0.0 {
        vals[k].clone()
    } else {
        &vals[k] * (1.0 - w) + &vals[k + 1] * w
    }
}

/// `Bᵀη + Dᵀζ + DᵀPσ + ρ`, the vector the feedforward term is built from.
pub(crate) fn forcing(c: &Coefficients, p: &Mat, eta: &Mat, zeta: &Mat) -> Mat {
    c.b.transpose() * eta + c.d.transpose() * zeta + c.d.transpose() * p * &c.diffusion_offset + &c.rho
}

fn eta_rhs(c: &Coefficients, p: &Mat, eta: &Mat, s: f64) -> Result<Mat> {
    let (weight, coupling) = weight_and_coupling(c, p);
    // K = couplingᵀ · weight†, weight symmetric.
    let k = pinv_solve(&weight, &coupling, 0.0)?.transpose();
    let zeta = Mat::zeros(eta.nrows(), 1);
    let p_sigma = p * &c.diffusion_offset;
    let val = (c.a.transpose() - &k * c.b.transpose()) * eta
        + (c.c.transpose() - &k * c.d.transpose()) * (zeta + p_sigma)
        - &k * &c.rho
        + p * &c.drift_offset
        + &c.q_lin;
    let out = -val;
    if out.iter().all(|x| x.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NumericOverflow {
            time: s,
            what: "non-finite adjoint right-hand side".into(),
        })
    }
}

/// Backward RK4 for `η` on the Riccati grid.
pub fn solve_eta(sp: &StackedProblem, p: &RiccatiSolution) -> Result<AdjointSolution> {
    if !p.is_complete() {
        return Err(Error::invalid(
            "Riccati solution does not cover the horizon",
        ));
    }
    let grid = p.grid.clone();
    let n = sp.n();
    let last = grid.len() - 1;
    let mut eta = vec![Mat::zeros(n, 1); grid.len()];
    eta[last] = sp.terminal_lin().clone();
    for k in (0..last).rev() {
        let (s1, s0) = (grid[k + 1], grid[k]);
        let h = s1 - s0;
        let mid = s1 - 0.5 * h;
        let (c1, cm, c0) = (sp.at(s1), sp.at(mid), sp.at(s0));
        let (p1, p0) = (&p.values[k + 1], &p.values[k]);
        let pm = midpoint_value(sp, p, k, mid)?;
        let e = &eta[k + 1];
        let k1 = eta_rhs(&c1, p1, e, s1)?;
        let k2 = eta_rhs(&cm, &pm, &(e - &k1 * (0.5 * h)), mid)?;
        let k3 = eta_rhs(&cm, &pm, &(e - &k2 * (0.5 * h)), mid)?;
        let k4 = eta_rhs(&c0, p0, &(e - &k3 * h), s0)?;
        eta[k] = e - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    let zeta = vec![Mat::zeros(n, 1); grid.len()];
    Ok(AdjointSolution { grid, eta, zeta })
}

/// `P` at the midpoint of cell `k`: the closed form when there is one,
/// otherwise cubic Hermite through the nodes with slopes from the Riccati
/// right-hand side, which keeps the RK4 stages fourth-order accurate.
fn midpoint_value(sp: &StackedProblem, p: &RiccatiSolution, k: usize, mid: f64) -> Result<Mat> {
    if p.has_closed_form() {
        return p.evaluate(mid);
    }
    let (s0, s1) = (p.grid[k], p.grid[k + 1]);
    let (p0, p1) = (&p.values[k], &p.values[k + 1]);
    let linear = (p0 + p1) * 0.5;
    match (riccati_rhs(sp, s0, p0), riccati_rhs(sp, s1, p1)) {
        (Ok(d0), Ok(d1)) => Ok(linear + (d0 - d1) * ((s1 - s0) / 8.0)),
        _ => Ok(linear),
    }
}

/// Range inclusion of `Bᵀη + Dᵀζ + DᵀPσ + ρ` in `R + DᵀPD` at every node, and
/// square integrability of `(R + DᵀPD)†(Bᵀη + Dᵀζ + DᵀPσ + ρ)`.
pub fn check_eta_conditions(
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
    cfg: &RegularityConfig,
) -> Result<(bool, bool)> {
    if adj.grid.len() != p.grid.len() {
        return Err(Error::invalid("adjoint and Riccati grids differ"));
    }
    let mut range_ok = true;
    let mut sigma = Vec::with_capacity(p.grid.len());
    for (k, &s) in p.grid.iter().enumerate() {
        let c = sp.at(s);
        let (weight, _) = weight_and_coupling(&c, &p.values[k]);
        let w = forcing(&c, &p.values[k], &adj.eta[k], &adj.zeta[k]);
        range_ok &= range_inclusion(&w, &weight, cfg.range_tol)?;
        sigma.push(min_singular_value(&weight));
    }
    let v_sq = |s: f64| -> f64 {
        let run = || -> Result<f64> {
            let c = sp.at(s);
            let pv = p.evaluate(s)?;
            let (weight, _) = weight_and_coupling(&c, &pv);
            let w = forcing(&c, &pv, &adj.eta_at(s), &adj.zeta_at(s));
            Ok(pinv_solve(&weight, &w, 0.0)?.norm_squared())
        };
        run().unwrap_or(f64::INFINITY)
    };
    let verdict = l2_ladder(&p.grid, &sigma, v_sq, &cfg.ladder);
    Ok((range_ok, verdict.is_square_integrable()))
}

/// Value function
///
/// ```text
/// V(t, x) = ½{ ⟨P(t)x, x⟩ + 2⟨η(t), x⟩
///             + ∫_t^T ⟨Pσ, σ⟩ + 2⟨η, b⟩ + 2⟨ζ, σ⟩ − ⟨(R + DᵀPD)† w, w⟩ ds }
/// ```
///
/// with `w = Bᵀη + Dᵀζ + DᵀPσ + ρ`, integrated by the trapezoid rule on the
/// solution grid.
pub fn value_at(
    sp: &StackedProblem,
    p: &RiccatiSolution,
    adj: &AdjointSolution,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    let (t0, t1) = (adj.grid[0], adj.grid[adj.grid.len() - 1]);
    if !(t >= t0 && t <= t1) {
        return Err(Error::invalid(format!("t = {t} outside [{t0}, {t1}]")));
    }
    if x.len() != sp.n() {
        return Err(Error::invalid(format!(
            "state has {} components, expected {}",
            x.len(),
            sp.n()
        )));
    }
    let running = |s: f64, pv: &Mat, eta: &Mat, zeta: &Mat| -> Result<f64> {
        let c = sp.at(s);
        let (weight, _) = weight_and_coupling(&c, pv);
        let sigma = &c.diffusion_offset;
        let w = forcing(&c, pv, eta, zeta);
        let quad = (w.transpose() * pinv_solve(&weight, &w, 0.0)?)[(0, 0)];
        Ok((sigma.transpose() * pv * sigma)[(0, 0)]
            + 2.0 * (eta.transpose() * &c.drift_offset)[(0, 0)]
            + 2.0 * (zeta.transpose() * sigma)[(0, 0)]
            - quad)
    };

    let mut nodes: Vec<(f64, Mat, Mat, Mat)> = vec![(t, p.evaluate(t)?, adj.eta_at(t), adj.zeta_at(t))];
    for (k, &s) in adj.grid.iter().enumerate() {
        if s > t {
            nodes.push((s, p.values[k].clone(), adj.eta[k].clone(), adj.zeta[k].clone()));
        }
    }
    let mut integral = 0.0;
    if !sp.problem().is_homogeneous() {
        let vals = nodes
            .iter()
            .map(|(s, pv, e, z)| running(*s, pv, e, z))
            .collect::<Result<Vec<_>>>()?;
        for i in 1..nodes.len() {
            integral += 0.5 * (nodes[i].0 - nodes[i - 1].0) * (vals[i] + vals[i - 1]);
        }
    }
    let xv = Mat::from_column_slice(x.len(), 1, x);
    let (_, pt, eta_t, _) = &nodes[0];
    let quad = (xv.transpose() * pt * &xv)[(0, 0)];
    let lin = (eta_t.transpose() * &xv)[(0, 0)];
    Ok(0.5 * (quad + 2.0 * lin + integral))
}

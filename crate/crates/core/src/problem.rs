//! Game data model: time-dependent coefficients, validation, stacking of the
//! two players' blocks, the built-in examples and the JSON problem format.
//!
//! State equation (one-dimensional Brownian motion `W`):
//!
//! ```text
//! dX = (A X + B₁ u₁ + B₂ u₂ + b) ds + (C X + D₁ u₁ + D₂ u₂ + σ) dW,   X(t₀) = x
//! ```
//!
//! Payoff (player 1 minimizes, player 2 maximizes):
//!
//! ```text
//! J = ½ E[ ⟨G X(T), X(T)⟩ + 2⟨g, X(T)⟩
//!        + ∫ ⟨Q X, X⟩ + 2⟨S X, u⟩ + ⟨R u, u⟩ + 2⟨q, X⟩ + 2⟨ρ, u⟩ ds ]
//! ```
//!
//! with `u = (u₁, u₂)`, `S = (S₁; S₂)`, `R = [[R₁₁, R₁₂], [R₂₁, R₂₂]]` and
//! `ρ = (ρ₁; ρ₂)`. All data are deterministic functions of time.

use std::fmt;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::matrix::{asymmetry, max_abs, Mat};

/// Polynomial in `s`, coefficients in ascending degree.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn constant(c: f64) -> Self {
        Poly(vec![c])
    }

    pub fn one() -> Self {
        Poly::constant(1.0)
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * s + c)
    }

    pub fn derivative(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly::constant(0.0);
        }
        Poly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, c)| k as f64 * c)
                .collect(),
        )
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        if self.0.is_empty() || other.0.is_empty() {
            return Poly::constant(0.0);
        }
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let n = self.0.len().max(other.0.len());
        Poly(
            (0..n)
                .map(|k| self.0.get(k).unwrap_or(&0.0) + other.0.get(k).unwrap_or(&0.0))
                .collect(),
        )
    }

    pub fn scale(&self, c: f64) -> Poly {
        Poly(self.0.iter().map(|x| x * c).collect())
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().skip(1).all(|c| *c == 0.0)
    }
}

/// Rational function `numerator(s) / denominator(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarExpr {
    pub numerator: Poly,
    pub denominator: Poly,
}

impl ScalarExpr {
    pub fn constant(c: f64) -> Self {
        ScalarExpr {
            numerator: Poly::constant(c),
            denominator: Poly::one(),
        }
    }

    pub fn poly(coeffs: Vec<f64>) -> Self {
        ScalarExpr {
            numerator: Poly(coeffs),
            denominator: Poly::one(),
        }
    }

    pub fn rational(num: Vec<f64>, den: Vec<f64>) -> Self {
        ScalarExpr {
            numerator: Poly(num),
            denominator: Poly(den),
        }
    }

    pub fn eval(&self, s: f64) -> f64 {
        if self.denominator.0 == [1.0] {
            return self.numerator.eval(s);
        }
        self.numerator.eval(s) / self.denominator.eval(s)
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let n = self.numerator.eval(s);
        let d = self.denominator.eval(s);
        let dn = self.numerator.derivative().eval(s);
        let dd = self.denominator.derivative().eval(s);
        (dn * d - n * dd) / (d * d)
    }

    fn has_denominator(&self) -> bool {
        !self.denominator.is_constant()
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Repr {
    /// Row-major entries.
    Rational(Vec<ScalarExpr>),
    /// Linear interpolation between nodes, constant extension outside.
    Grid { times: Vec<f64>, values: Vec<Mat> },
}

/// Matrix-valued function of time.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFunction {
    rows: usize,
    cols: usize,
    repr: Repr,
}

impl MatrixFunction {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(&Mat::zeros(rows, cols))
    }

    pub fn constant(m: &Mat) -> Self {
        let entries = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| ScalarExpr::constant(m[(i, j)]))
            .collect();
        MatrixFunction {
            rows: m.nrows(),
            cols: m.ncols(),
            repr: Repr::Rational(entries),
        }
    }

    pub fn scalar(e: ScalarExpr) -> Self {
        MatrixFunction {
            rows: 1,
            cols: 1,
            repr: Repr::Rational(vec![e]),
        }
    }

    /// `entries` in row-major order.
    pub fn from_exprs(rows: usize, cols: usize, entries: Vec<ScalarExpr>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::invalid(format!(
                "expected {} entries for a {rows}x{cols} function, got {}",
                rows * cols,
                entries.len()
            )));
        }
        Ok(MatrixFunction {
            rows,
            cols,
            repr: Repr::Rational(entries),
        })
    }

    pub fn from_grid(times: Vec<f64>, values: Vec<Mat>) -> Result<Self> {
        if times.len() < 2 || times.len() != values.len() {
            return Err(Error::invalid(
                "a sampled function needs at least two nodes and one value per node",
            ));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("grid times must be strictly increasing"));
        }
        let (rows, cols) = values[0].shape();
        if values.iter().any(|v| v.shape() != (rows, cols)) {
            return Err(Error::invalid("grid values have inconsistent shapes"));
        }
        Ok(MatrixFunction {
            rows,
            cols,
            repr: Repr::Grid { times, values },
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_sampled(&self) -> bool {
        matches!(self.repr, Repr::Grid { .. })
    }

    pub fn eval(&self, s: f64) -> Mat {
        match &self.repr {
            Repr::Rational(entries) => {
                Mat::from_fn(self.rows, self.cols, |i, j| entries[i * self.cols + j].eval(s))
            }
            Repr::Grid { times, values } => {
                let (k, w) = locate(times, s);
                if w == 0.0 {
                    values[k].clone()
                } else {
                    &values[k] * (1.0 - w) + &values[k + 1] * w
                }
            }
        }
    }

    /// Time derivative: exact for rational entries, the slope of the
    /// enclosing segment for sampled ones.
    pub fn derivative(&self, s: f64) -> Mat {
        match &self.repr {
            Repr::Rational(entries) => Mat::from_fn(self.rows, self.cols, |i, j| {
                entries[i * self.cols + j].derivative(s)
            }),
            Repr::Grid { times, values } => {
                let (k, _) = locate(times, s);
                let k = k.min(times.len() - 2);
                (&values[k + 1] - &values[k]) / (times[k + 1] - times[k])
            }
        }
    }

    fn exprs(&self) -> &[ScalarExpr] {
        match &self.repr {
            Repr::Rational(e) => e,
            Repr::Grid { .. } => &[],
        }
    }

    fn grid_times(&self) -> Option<&[f64]> {
        match &self.repr {
            Repr::Grid { times, .. } => Some(times),
            Repr::Rational(_) => None,
        }
    }
}

/// Segment index `k` and weight `w` such that `s ≈ (1−w)·t_k + w·t_{k+1}`,
/// clamped to the grid.
pub(crate) fn locate(times: &[f64], s: f64) -> (usize, f64) {
    let last = times.len() - 1;
    if s <= times[0] {
        return (0, 0.0);
    }
    if s >= times[last] {
        return (last, 0.0);
    }
    let k = match times.binary_search_by(|t| t.total_cmp(&s)) {
        Ok(k) => return (k, 0.0),
        Err(k) => k - 1,
    };
    let w = (s - times[k]) / (times[k + 1] - times[k]);
    (k, w)
}

/// Full description of a game on `[t0, t_end]`.
#[derive(Clone, Debug)]
pub struct GameProblem {
    pub name: String,
    pub t0: f64,
    pub t_end: f64,
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub a: MatrixFunction,
    pub b1: MatrixFunction,
    pub b2: MatrixFunction,
    pub c: MatrixFunction,
    pub d1: MatrixFunction,
    pub d2: MatrixFunction,
    /// Drift offset `b` (n×1).
    pub drift_offset: MatrixFunction,
    /// Diffusion offset `σ` (n×1).
    pub diffusion_offset: MatrixFunction,
    pub q: MatrixFunction,
    pub s1: MatrixFunction,
    pub s2: MatrixFunction,
    pub r11: MatrixFunction,
    pub r12: MatrixFunction,
    pub r21: MatrixFunction,
    pub r22: MatrixFunction,
    /// Linear state weight `q` (n×1).
    pub q_lin: MatrixFunction,
    pub rho1: MatrixFunction,
    pub rho2: MatrixFunction,
    /// Terminal weight `G`.
    pub terminal: Mat,
    /// Terminal linear weight `g` (n×1).
    pub terminal_lin: Mat,
}

impl GameProblem {
    /// All-zero problem with consistent shapes.
    pub fn zeros(name: &str, t0: f64, t_end: f64, n: usize, m1: usize, m2: usize) -> Self {
        let z = MatrixFunction::zeros;
        GameProblem {
            name: name.to_string(),
            t0,
            t_end,
            n,
            m1,
            m2,
            a: z(n, n),
            b1: z(n, m1),
            b2: z(n, m2),
            c: z(n, n),
            d1: z(n, m1),
            d2: z(n, m2),
            drift_offset: z(n, 1),
            diffusion_offset: z(n, 1),
            q: z(n, n),
            s1: z(m1, n),
            s2: z(m2, n),
            r11: z(m1, m1),
            r12: z(m1, m2),
            r21: z(m2, m1),
            r22: z(m2, m2),
            q_lin: z(n, 1),
            rho1: z(m1, 1),
            rho2: z(m2, 1),
            terminal: Mat::zeros(n, n),
            terminal_lin: Mat::zeros(n, 1),
        }
    }

    pub fn m(&self) -> usize {
        self.m1 + self.m2
    }

    /// `(name, function, expected shape)` for every time-dependent coefficient.
    fn coefficient_table(&self) -> Vec<(&'static str, &MatrixFunction, (usize, usize))> {
        let (n, m1, m2) = (self.n, self.m1, self.m2);
        vec![
            ("A", &self.a, (n, n)),
            ("B1", &self.b1, (n, m1)),
            ("B2", &self.b2, (n, m2)),
            ("C", &self.c, (n, n)),
            ("D1", &self.d1, (n, m1)),
            ("D2", &self.d2, (n, m2)),
            ("b", &self.drift_offset, (n, 1)),
            ("sigma", &self.diffusion_offset, (n, 1)),
            ("Q", &self.q, (n, n)),
            ("S1", &self.s1, (m1, n)),
            ("S2", &self.s2, (m2, n)),
            ("R11", &self.r11, (m1, m1)),
            ("R12", &self.r12, (m1, m2)),
            ("R21", &self.r21, (m2, m1)),
            ("R22", &self.r22, (m2, m2)),
            ("q", &self.q_lin, (n, 1)),
            ("rho1", &self.rho1, (m1, 1)),
            ("rho2", &self.rho2, (m2, 1)),
        ]
    }

    pub fn is_homogeneous(&self) -> bool {
        let zero = |f: &MatrixFunction| {
            f.exprs().iter().all(|e| e.numerator.0.iter().all(|c| *c == 0.0)) && !f.is_sampled()
        };
        zero(&self.drift_offset)
            && zero(&self.diffusion_offset)
            && zero(&self.q_lin)
            && zero(&self.rho1)
            && zero(&self.rho2)
            && self.terminal_lin.iter().all(|x| *x == 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }
}

/// Sample count for coefficient checks.
const CHECK_SAMPLES: usize = 257;
/// Sample count for denominator root scans.
const ROOT_SAMPLES: usize = 10_001;
/// Symmetry slack on sampled coefficients.
const SYMMETRY_TOL: f64 = 1e-10;
/// Finite bound standing in for essential boundedness of `D` and `R`.
const BOUND: f64 = 1e12;

fn sample_points(t0: f64, t1: f64, count: usize) -> impl Iterator<Item = f64> {
    let h = (t1 - t0) / (count - 1) as f64;
    (0..count).map(move |k| if k + 1 == count { t1 } else { t0 + k as f64 * h })
}

/// Returns a root of `den` in `[t0, t1]` if it has one.
fn denominator_root(den: &Poly, t0: f64, t1: f64) -> Option<f64> {
    let pts: Vec<f64> = sample_points(t0, t1, ROOT_SAMPLES).collect();
    let vals: Vec<f64> = pts.iter().map(|&s| den.eval(s)).collect();
    let scale = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    for k in 0..pts.len() {
        if vals[k] == 0.0 {
            return Some(pts[k]);
        }
        if k + 1 < pts.len() && vals[k].signum() != vals[k + 1].signum() {
            // Bisection on the sign change.
            let (mut lo, mut hi) = (pts[k], pts[k + 1]);
            let flo = vals[k];
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if den.eval(mid).signum() == flo.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return Some(0.5 * (lo + hi));
        }
    }
    // Even-multiplicity roots: refine local minima of |den|.
    for k in 1..pts.len().saturating_sub(1) {
        let (a, b, c) = (vals[k - 1].abs(), vals[k].abs(), vals[k + 1].abs());
        if b <= a && b <= c {
            let (mut lo, mut hi) = (pts[k - 1], pts[k + 1]);
            for _ in 0..100 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if den.eval(m1).abs() < den.eval(m2).abs() {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            let s = 0.5 * (lo + hi);
            if den.eval(s).abs() <= 1e-12 * scale {
                return Some(s);
            }
        }
    }
    None
}

/// Checks shapes, symmetry, denominator roots, finiteness and boundedness.
pub fn validate(p: &GameProblem) -> ValidationReport {
    let mut rep = ValidationReport::default();
    if !(p.t0.is_finite() && p.t_end.is_finite() && p.t0 < p.t_end) {
        rep.push("horizon", format!("need t0 < T, got [{}, {}]", p.t0, p.t_end));
        return rep;
    }
    if p.n == 0 || p.m1 == 0 {
        rep.push("dims", "n and m1 must be positive");
        return rep;
    }
    let mut shapes_ok = true;
    for (name, f, want) in p.coefficient_table() {
        if f.shape() != want {
            rep.push(name, format!("shape {:?}, expected {:?}", f.shape(), want));
            shapes_ok = false;
        }
    }
    if p.terminal.shape() != (p.n, p.n) {
        rep.push("G", format!("shape {:?}, expected {:?}", p.terminal.shape(), (p.n, p.n)));
        shapes_ok = false;
    }
    if p.terminal_lin.shape() != (p.n, 1) {
        rep.push("g", format!("shape {:?}, expected {:?}", p.terminal_lin.shape(), (p.n, 1)));
        shapes_ok = false;
    }
    if !shapes_ok {
        return rep;
    }

    let mut roots_ok = true;
    for (name, f, _) in p.coefficient_table() {
        for (k, e) in f.exprs().iter().enumerate() {
            if e.has_denominator() {
                if let Some(s) = denominator_root(&e.denominator, p.t0, p.t_end) {
                    rep.push(
                        format!("{name}[{k}]"),
                        format!("denominator vanishes at s ≈ {s:.6} inside the horizon"),
                    );
                    roots_ok = false;
                }
            } else if e.denominator.eval(0.0) == 0.0 {
                rep.push(format!("{name}[{k}]"), "zero denominator");
                roots_ok = false;
            }
        }
        if let Some(times) = f.grid_times() {
            let span_ok = (times[0] - p.t0).abs() <= 1e-12 * (1.0 + p.t0.abs())
                && (times[times.len() - 1] - p.t_end).abs() <= 1e-12 * (1.0 + p.t_end.abs());
            if !span_ok {
                rep.push(name, "sampled grid must span exactly [t0, T]");
            }
        }
    }
    if !roots_ok {
        return rep;
    }

    if !p.terminal.iter().all(|x| x.is_finite()) || !p.terminal_lin.iter().all(|x| x.is_finite()) {
        rep.push("G", "terminal data must be finite");
    }
    if asymmetry(&p.terminal) > SYMMETRY_TOL * max_abs(&p.terminal).max(1.0) {
        rep.push("G", "terminal weight is not symmetric");
    }

    let mut flagged = std::collections::BTreeSet::new();
    for s in sample_points(p.t0, p.t_end, CHECK_SAMPLES) {
        let mut note = |field: &str, msg: String| {
            if flagged.insert(format!("{field}:{}", msg.split(' ').next().unwrap_or(""))) {
                rep.push(field, msg);
            }
        };
        for (name, f, _) in p.coefficient_table() {
            let v = f.eval(s);
            if !v.iter().all(|x| x.is_finite()) {
                note(name, format!("non-finite value at s = {s}"));
            }
        }
        for (name, f) in [("Q", &p.q), ("R11", &p.r11), ("R22", &p.r22)] {
            let v = f.eval(s);
            if asymmetry(&v) > SYMMETRY_TOL * max_abs(&v).max(1.0) {
                note(name, format!("not symmetric at s = {s}"));
            }
        }
        let r12 = p.r12.eval(s);
        let r21 = p.r21.eval(s);
        if max_abs(&(r12.transpose() - &r21)) > SYMMETRY_TOL * max_abs(&r21).max(1.0) {
            note("R12", format!("R12ᵀ differs from R21 at s = {s}"));
        }
        for (name, f) in [
            ("D1", &p.d1),
            ("D2", &p.d2),
            ("R11", &p.r11),
            ("R12", &p.r12),
            ("R21", &p.r21),
            ("R22", &p.r22),
        ] {
            if max_abs(&f.eval(s)) > BOUND {
                note(name, format!("exceeds bound {BOUND:e} at s = {s}"));
            }
        }
    }
    rep
}

/// Coefficients at one instant with both players' blocks stacked
/// (player 1 first). Vectors are stored as single-column matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Coefficients {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub q: Mat,
    pub s: Mat,
    pub r: Mat,
    pub drift_offset: Mat,
    pub diffusion_offset: Mat,
    pub q_lin: Mat,
    pub rho: Mat,
}

/// Coefficients at one instant in per-player blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockCoefficients {
    pub m1: usize,
    pub a: Mat,
    pub b1: Mat,
    pub b2: Mat,
    pub c: Mat,
    pub d1: Mat,
    pub d2: Mat,
    pub q: Mat,
    pub s1: Mat,
    pub s2: Mat,
    pub r11: Mat,
    pub r12: Mat,
    pub r21: Mat,
    pub r22: Mat,
    pub drift_offset: Mat,
    pub diffusion_offset: Mat,
    pub q_lin: Mat,
    pub rho1: Mat,
    pub rho2: Mat,
}

fn hcat(l: &Mat, r: &Mat) -> Mat {
    let mut out = Mat::zeros(l.nrows(), l.ncols() + r.ncols());
    out.view_mut((0, 0), l.shape()).copy_from(l);
    out.view_mut((0, l.ncols()), r.shape()).copy_from(r);
    out
}

fn vcat(t: &Mat, b: &Mat) -> Mat {
    let mut out = Mat::zeros(t.nrows() + b.nrows(), t.ncols());
    out.view_mut((0, 0), t.shape()).copy_from(t);
    out.view_mut((t.nrows(), 0), b.shape()).copy_from(b);
    out
}

impl BlockCoefficients {
    pub fn stack(&self) -> Coefficients {
        Coefficients {
            a: self.a.clone(),
            b: hcat(&self.b1, &self.b2),
            c: self.c.clone(),
            d: hcat(&self.d1, &self.d2),
            q: self.q.clone(),
            s: vcat(&self.s1, &self.s2),
            r: vcat(&hcat(&self.r11, &self.r12), &hcat(&self.r21, &self.r22)),
            drift_offset: self.drift_offset.clone(),
            diffusion_offset: self.diffusion_offset.clone(),
            q_lin: self.q_lin.clone(),
            rho: vcat(&self.rho1, &self.rho2),
        }
    }
}

impl Coefficients {
    /// Splits stacked blocks back into player blocks (`m1` controls for
    /// player 1).
    pub fn split(&self, m1: usize) -> BlockCoefficients {
        let m = self.b.ncols();
        let m2 = m - m1;
        let cols = |x: &Mat, from: usize, len: usize| x.columns(from, len).into_owned();
        let rows = |x: &Mat, from: usize, len: usize| x.rows(from, len).into_owned();
        BlockCoefficients {
            m1,
            a: self.a.clone(),
            b1: cols(&self.b, 0, m1),
            b2: cols(&self.b, m1, m2),
            c: self.c.clone(),
            d1: cols(&self.d, 0, m1),
            d2: cols(&self.d, m1, m2),
            q: self.q.clone(),
            s1: rows(&self.s, 0, m1),
            s2: rows(&self.s, m1, m2),
            r11: self.r.view((0, 0), (m1, m1)).into_owned(),
            r12: self.r.view((0, m1), (m1, m2)).into_owned(),
            r21: self.r.view((m1, 0), (m2, m1)).into_owned(),
            r22: self.r.view((m1, m1), (m2, m2)).into_owned(),
            drift_offset: self.drift_offset.clone(),
            diffusion_offset: self.diffusion_offset.clone(),
            q_lin: self.q_lin.clone(),
            rho1: rows(&self.rho, 0, m1),
            rho2: rows(&self.rho, m1, m2),
        }
    }
}

/// A validated problem in stacked notation `B = (B₁ B₂)`, `D = (D₁ D₂)`,
/// `S = (S₁; S₂)`, `R = [[R₁₁, R₁₂], [R₂₁, R₂₂]]`, `ρ = (ρ₁; ρ₂)`.
#[derive(Clone, Debug)]
pub struct StackedProblem {
    problem: GameProblem,
}

impl StackedProblem {
    pub fn problem(&self) -> &GameProblem {
        &self.problem
    }

    pub fn into_problem(self) -> GameProblem {
        self.problem
    }

    pub fn n(&self) -> usize {
        self.problem.n
    }
    pub fn m1(&self) -> usize {
        self.problem.m1
    }
    pub fn m2(&self) -> usize {
        self.problem.m2
    }
    pub fn m(&self) -> usize {
        self.problem.m()
    }
    pub fn t0(&self) -> f64 {
        self.problem.t0
    }
    pub fn t_end(&self) -> f64 {
        self.problem.t_end
    }
    pub fn terminal(&self) -> &Mat {
        &self.problem.terminal
    }
    pub fn terminal_lin(&self) -> &Mat {
        &self.problem.terminal_lin
    }

    pub fn blocks_at(&self, s: f64) -> BlockCoefficients {
        let p = &self.problem;
        BlockCoefficients {
            m1: p.m1,
            a: p.a.eval(s),
            b1: p.b1.eval(s),
            b2: p.b2.eval(s),
            c: p.c.eval(s),
            d1: p.d1.eval(s),
            d2: p.d2.eval(s),
            q: p.q.eval(s),
            s1: p.s1.eval(s),
            s2: p.s2.eval(s),
            r11: p.r11.eval(s),
            r12: p.r12.eval(s),
            r21: p.r21.eval(s),
            r22: p.r22.eval(s),
            drift_offset: p.drift_offset.eval(s),
            diffusion_offset: p.diffusion_offset.eval(s),
            q_lin: p.q_lin.eval(s),
            rho1: p.rho1.eval(s),
            rho2: p.rho2.eval(s),
        }
    }

    /// Stacked coefficients at `s`.
    pub fn at(&self, s: f64) -> Coefficients {
        self.blocks_at(s).stack()
    }
}

/// Stacks a validated problem.
pub fn assemble(p: &GameProblem) -> Result<StackedProblem> {
    let rep = validate(p);
    if !rep.is_valid() {
        return Err(Error::Validation(rep.violations));
    }
    Ok(StackedProblem { problem: p.clone() })
}

/// Names of the built-in problems.
pub const BUILTIN_NAMES: [&str; 3] = ["example-6.1", "example-6.2", "example-6.3"];

/// Built-in problem by name.
pub fn builtin(name: &str) -> Option<GameProblem> {
    match name {
        "example-6.1" => Some(example_6_1()),
        "example-6.2" => Some(example_6_2()),
        "example-6.3" => Some(example_6_3()),
        _ => None,
    }
}

fn scalar(c: f64) -> MatrixFunction {
    MatrixFunction::constant(&Mat::from_element(1, 1, c))
}

/// One-player problem `dX = u ds + u dW` on `[0, 1]` with
/// `R(s) = s³/2 − s²`, `G = 1`. Its Riccati solution `P(s) = s²` yields the
/// gain `−2/s`, which is not square integrable.
pub fn example_6_1() -> GameProblem {
    let mut p = GameProblem::zeros("example-6.1", 0.0, 1.0, 1, 1, 0);
    p.b1 = scalar(1.0);
    p.d1 = scalar(1.0);
    p.r11 = MatrixFunction::scalar(ScalarExpr::poly(vec![0.0, 0.0, -1.0, 0.5]));
    p.terminal = Mat::from_element(1, 1, 1.0);
    p
}

/// One-player problem with `R(s) = (s − 3/2)² + 3/4`, `A = ½((R−1)²/R² − 1)`,
/// `B = (R−1)/R`, `Q = −1/R`, `D = 1`, `G = −1`. Its Riccati equation has the
/// two solutions `−1` (regular) and `s − 2` (not regular).
pub fn example_6_2() -> GameProblem {
    let r = Poly(vec![3.0, -3.0, 1.0]);
    let r_minus_1 = Poly(vec![2.0, -3.0, 1.0]);
    let r_sq = r.mul(&r);
    let mut p = GameProblem::zeros("example-6.2", 0.0, 1.0, 1, 1, 0);
    // ½((R−1)² − R²)/R² = (1 − 2R)/(2R²)
    p.a = MatrixFunction::scalar(ScalarExpr {
        numerator: Poly::one().add(&r.scale(-2.0)),
        denominator: r_sq.scale(2.0),
    });
    p.b1 = MatrixFunction::scalar(ScalarExpr {
        numerator: r_minus_1,
        denominator: r.clone(),
    });
    p.d1 = scalar(1.0);
    p.q = MatrixFunction::scalar(ScalarExpr {
        numerator: Poly::constant(-1.0),
        denominator: r.clone(),
    });
    p.r11 = MatrixFunction::scalar(ScalarExpr {
        numerator: r,
        denominator: Poly::one(),
    });
    p.terminal = Mat::from_element(1, 1, -1.0);
    p
}

/// Two-player game `dX = (u₁ − u₂)(ds + dW)` on `[0, 1]` with payoff
/// `½E[X(1)² + ∫ u₁² − u₂² ds]`. `P ≡ 1` and the closed-loop saddle gain is
/// `(−1, −1)ᵀ`, yet no open-loop saddle point exists.
pub fn example_6_3() -> GameProblem {
    let mut p = GameProblem::zeros("example-6.3", 0.0, 1.0, 1, 1, 1);
    p.b1 = scalar(1.0);
    p.b2 = scalar(-1.0);
    p.d1 = scalar(1.0);
    p.d2 = scalar(-1.0);
    p.r11 = scalar(1.0);
    p.r22 = scalar(-1.0);
    p.terminal = Mat::from_element(1, 1, 1.0);
    p
}

// ---------------------------------------------------------------------------
// JSON problem format

fn get<'a>(v: &'a Value, key: &str, path: &str) -> Result<&'a Value> {
    v.get(key)
        .ok_or_else(|| Error::parse(format!("{path}.{key}"), "missing field"))
}

fn as_f64(v: &Value, path: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| Error::parse(path, format!("expected a number, got {v}")))
}

fn as_usize(v: &Value, path: &str) -> Result<usize> {
    v.as_u64()
        .map(|x| x as usize)
        .ok_or_else(|| Error::parse(path, format!("expected a nonnegative integer, got {v}")))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| Error::parse(path, "expected an array"))
}

fn f64_list(v: &Value, path: &str) -> Result<Vec<f64>> {
    as_array(v, path)?
        .iter()
        .enumerate()
        .map(|(k, x)| as_f64(x, &format!("{path}[{k}]")))
        .collect()
}

/// Parses a row-major numeric matrix. A bare number is accepted for 1×1 and
/// a flat list for a single column.
pub fn parse_matrix(v: &Value, rows: usize, cols: usize, path: &str) -> Result<Mat> {
    if let Some(x) = v.as_f64() {
        if rows == 1 && cols == 1 {
            return Ok(Mat::from_element(1, 1, x));
        }
        return Err(Error::parse(path, format!("scalar given for a {rows}x{cols} matrix")));
    }
    let arr = as_array(v, path)?;
    if cols == 1 && arr.len() == rows && arr.iter().all(|x| x.is_number()) {
        return Ok(Mat::from_column_slice(rows, 1, &f64_list(v, path)?));
    }
    if arr.len() != rows {
        return Err(Error::parse(path, format!("expected {rows} rows, got {}", arr.len())));
    }
    let mut m = Mat::zeros(rows, cols);
    for (i, row) in arr.iter().enumerate() {
        let rp = format!("{path}[{i}]");
        let vals = f64_list(row, &rp)?;
        if vals.len() != cols {
            return Err(Error::parse(rp, format!("expected {cols} columns, got {}", vals.len())));
        }
        for (j, x) in vals.into_iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    Ok(m)
}

fn parse_expr(v: &Value, path: &str) -> Result<ScalarExpr> {
    if let Some(x) = v.as_f64() {
        return Ok(ScalarExpr::constant(x));
    }
    let num = f64_list(get(v, "num", path)?, &format!("{path}.num"))?;
    let den = match v.get("den") {
        Some(d) => f64_list(d, &format!("{path}.den"))?,
        None => vec![1.0],
    };
    if num.is_empty() || den.is_empty() || den.iter().all(|c| *c == 0.0) {
        return Err(Error::parse(path, "empty numerator or zero denominator"));
    }
    Ok(ScalarExpr::rational(num, den))
}

/// Parses one coefficient in the `const` / `rational` / `grid` forms.
pub fn parse_matrix_function(
    v: &Value,
    rows: usize,
    cols: usize,
    path: &str,
) -> Result<MatrixFunction> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::parse(path, "expected an object with `const`, `rational` or `grid`"))?;
    if obj.len() != 1 {
        return Err(Error::parse(path, "exactly one of `const`, `rational`, `grid` expected"));
    }
    if let Some(c) = obj.get("const") {
        return Ok(MatrixFunction::constant(&parse_matrix(c, rows, cols, &format!("{path}.const"))?));
    }
    if let Some(r) = obj.get("rational") {
        let rp = format!("{path}.rational");
        let arr = as_array(r, &rp)?;
        if arr.len() != rows {
            return Err(Error::parse(rp, format!("expected {rows} rows, got {}", arr.len())));
        }
        let mut entries = Vec::with_capacity(rows * cols);
        for (i, row) in arr.iter().enumerate() {
            let rowp = format!("{rp}[{i}]");
            let cells = as_array(row, &rowp)?;
            if cells.len() != cols {
                return Err(Error::parse(rowp, format!("expected {cols} columns, got {}", cells.len())));
            }
            for (j, cell) in cells.iter().enumerate() {
                entries.push(parse_expr(cell, &format!("{rowp}[{j}]"))?);
            }
        }
        return MatrixFunction::from_exprs(rows, cols, entries);
    }
    if let Some(g) = obj.get("grid") {
        let gp = format!("{path}.grid");
        let times = f64_list(get(g, "times", &gp)?, &format!("{gp}.times"))?;
        let vp = format!("{gp}.values");
        let vals = as_array(get(g, "values", &gp)?, &vp)?;
        if vals.len() != times.len() {
            return Err(Error::parse(vp, "one value per time node expected"));
        }
        let values = vals
            .iter()
            .enumerate()
            .map(|(k, x)| parse_matrix(x, rows, cols, &format!("{vp}[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        return MatrixFunction::from_grid(times, values).map_err(|e| Error::parse(gp, e.to_string()));
    }
    Err(Error::parse(path, "expected one of `const`, `rational`, `grid`"))
}

fn parse_constant(v: &Value, rows: usize, cols: usize, path: &str) -> Result<Mat> {
    match v.get("const") {
        Some(c) => parse_matrix(c, rows, cols, &format!("{path}.const")),
        None => parse_matrix(v, rows, cols, path),
    }
}

/// Parses a problem document and validates it.
pub fn load_problem(document: &str) -> Result<GameProblem> {
    if document.trim().is_empty() {
        return Err(Error::parse("$", "empty document"));
    }
    let v: Value =
        serde_json::from_str(document).map_err(|e| Error::parse("$", e.to_string()))?;
    if !v.is_object() {
        return Err(Error::parse("$", "expected a JSON object"));
    }
    let horizon = get(&v, "horizon", "$")?;
    let t0 = as_f64(get(horizon, "t0", "$.horizon")?, "$.horizon.t0")?;
    let t_end = as_f64(get(horizon, "T", "$.horizon")?, "$.horizon.T")?;
    let dims = get(&v, "dims", "$")?;
    let n = as_usize(get(dims, "n", "$.dims")?, "$.dims.n")?;
    let m1 = as_usize(get(dims, "m1", "$.dims")?, "$.dims.m1")?;
    let m2 = match dims.get("m2") {
        Some(x) => as_usize(x, "$.dims.m2")?,
        None => 0,
    };
    let name = v.get("name").and_then(Value::as_str).unwrap_or("problem");
    let mut p = GameProblem::zeros(name, t0, t_end, n, m1, m2);

    let required = |key: &str, needed: bool| -> Result<Option<&Value>> {
        match v.get(key) {
            Some(x) => Ok(Some(x)),
            None if needed => Err(Error::parse(format!("$.{key}"), "missing field")),
            None => Ok(None),
        }
    };
    let fields: [(&str, bool, usize, usize); 18] = [
        ("A", true, n, n),
        ("B1", true, n, m1),
        ("B2", m2 > 0, n, m2),
        ("C", false, n, n),
        ("D1", false, n, m1),
        ("D2", false, n, m2),
        ("b", false, n, 1),
        ("sigma", false, n, 1),
        ("Q", false, n, n),
        ("S1", false, m1, n),
        ("S2", false, m2, n),
        ("R11", true, m1, m1),
        ("R12", false, m1, m2),
        ("R21", false, m2, m1),
        ("R22", m2 > 0, m2, m2),
        ("q", false, n, 1),
        ("rho1", false, m1, 1),
        ("rho2", false, m2, 1),
    ];
    for (key, needed, rows, cols) in fields {
        let Some(val) = required(key, needed)? else { continue };
        let f = parse_matrix_function(val, rows, cols, &format!("$.{key}"))?;
        let slot = match key {
            "A" => &mut p.a,
            "B1" => &mut p.b1,
            "B2" => &mut p.b2,
            "C" => &mut p.c,
            "D1" => &mut p.d1,
            "D2" => &mut p.d2,
            "b" => &mut p.drift_offset,
            "sigma" => &mut p.diffusion_offset,
            "Q" => &mut p.q,
            "S1" => &mut p.s1,
            "S2" => &mut p.s2,
            "R11" => &mut p.r11,
            "R12" => &mut p.r12,
            "R21" => &mut p.r21,
            "R22" => &mut p.r22,
            "q" => &mut p.q_lin,
            "rho1" => &mut p.rho1,
            _ => &mut p.rho2,
        };
        *slot = f;
    }
    p.terminal = parse_constant(get(&v, "G", "$")?, n, n, "$.G")?;
    if let Some(g) = v.get("g") {
        p.terminal_lin = parse_constant(g, n, 1, "$.g")?;
    }
    let rep = validate(&p);
    if !rep.is_valid() {
        return Err(Error::Validation(rep.violations));
    }
    Ok(p)
}

/// Resolves a built-in name or reads a problem file.
pub fn load_problem_source(source: &str) -> Result<GameProblem> {
    if let Some(p) = builtin(source) {
        return Ok(p);
    }
    let path = Path::new(source);
    if !path.exists() {
        return Err(Error::parse(
            "$",
            format!(
                "`{source}` is neither a built-in problem ({}) nor a readable file",
                BUILTIN_NAMES.join(", ")
            ),
        ));
    }
    load_problem(&std::fs::read_to_string(path)?)
}

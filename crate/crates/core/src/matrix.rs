//! Dense matrix utilities: Moore–Penrose pseudo-inverse, range inclusion and
//! semidefiniteness tests.
//!
//! Decompositions come from `nalgebra`; rank decisions and tolerances are
//! handled here.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default tolerance for [`range_inclusion`].
pub const DEFAULT_RANGE_TOL: f64 = 1e-9;
/// Default tolerance for [`definiteness`].
pub const DEFAULT_SIGN_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct PinvResult {
    pub pinv: Mat,
    pub rank: usize,
    /// Nonincreasing.
    pub singular_values: Vec<f64>,
    /// Singular values at or below this were treated as zero.
    pub cutoff: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Definiteness {
    /// Positive semidefinite.
    Psd,
    /// Negative semidefinite.
    Nsd,
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Mat) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    max_abs(&(m - m.transpose()))
}

fn ensure_finite(m: &Mat, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(format!("{what} has non-finite entries")))
    }
}

/// Rank cutoff used for a matrix with the given shape and largest singular
/// value.
pub fn rank_cutoff(rows: usize, cols: usize, sigma_max: f64, rel_tol: f64) -> f64 {
    if rel_tol > 0.0 {
        rel_tol * sigma_max
    } else {
        rows.max(cols) as f64 * f64::EPSILON * sigma_max
    }
}

/// Thin SVD `M = U diag(σ) Vᵀ` with `σ` sorted descending.
///
/// Computed from the symmetric eigendecomposition of `[[0, M], [Mᵀ, 0]]`,
/// whose eigenvalues are `±σᵢ` with eigenvectors `(uᵢ, ±vᵢ)/√2`. nalgebra's
/// bidiagonal SVD returns inaccurate factors on some rank-deficient inputs,
/// while its symmetric eigensolver does not, and this route keeps the
/// conditioning of `M` rather than squaring it as `MᵀM` would.
fn singular_triplets(m: &Mat) -> (Vec<f64>, Mat, Mat) {
    let (rows, cols) = m.shape();
    let k = rows.min(cols);
    let mut aug = Mat::zeros(rows + cols, rows + cols);
    aug.view_mut((0, rows), (rows, cols)).copy_from(m);
    aug.view_mut((rows, 0), (cols, rows)).copy_from(&m.transpose());
    let eig = aug.symmetric_eigen();
    let mut order: Vec<usize> = (0..rows + cols).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut sigma = Vec::with_capacity(k);
    let mut u = Mat::zeros(rows, k);
    let mut v = Mat::zeros(cols, k);
    let root2 = std::f64::consts::SQRT_2;
    for (j, &idx) in order.iter().take(k).enumerate() {
        sigma.push(eig.eigenvalues[idx].max(0.0));
        let w = eig.eigenvectors.column(idx);
        u.column_mut(j).copy_from(&(w.rows(0, rows) * root2));
        v.column_mut(j).copy_from(&(w.rows(rows, cols) * root2));
    }
    (sigma, u, v)
}

/// SVD-based Moore–Penrose pseudo-inverse.
///
/// `rel_tol == 0` selects the default cutoff `max(rows, cols) · ε · σ_max`;
/// otherwise singular values `≤ rel_tol · σ_max` are dropped.
pub fn pseudo_inverse(m: &Mat, rel_tol: f64) -> Result<PinvResult> {
    ensure_finite(m, "matrix")?;
    if !(rel_tol >= 0.0) {
        return Err(Error::invalid("rel_tol must be nonnegative"));
    }
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Ok(PinvResult {
            pinv: Mat::zeros(cols, rows),
            rank: 0,
            singular_values: Vec::new(),
            cutoff: 0.0,
        });
    }
    if rows == 1 && cols == 1 {
        let a = m[(0, 0)];
        let cutoff = rank_cutoff(1, 1, a.abs(), rel_tol);
        let keep = a.abs() > cutoff && a != 0.0;
        return Ok(PinvResult {
            pinv: Mat::from_element(1, 1, if keep { 1.0 / a } else { 0.0 }),
            rank: keep as usize,
            singular_values: vec![a.abs()],
            cutoff,
        });
    }
    let (sigma, u, v) = singular_triplets(m);
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let cutoff = rank_cutoff(rows, cols, sigma_max, rel_tol);

    let mut pinv = Mat::zeros(cols, rows);
    let mut rank = 0;
    for (k, &s) in sigma.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            // pinv += v_k u_kᵀ / s
            pinv.ger(1.0 / s, &v.column(k), &u.column(k), 1.0);
        }
    }
    Ok(PinvResult {
        pinv,
        rank,
        singular_values: sigma,
        cutoff,
    })
}

/// Computes `M† · rhs`.
///
/// When `M` is square and numerically nonsingular the product is obtained by
/// an LU solve, which coincides with `M⁻¹ · rhs` and is exact on small
/// integer-valued systems. Rank-deficient or rectangular `M` go through the
/// pseudo-inverse.
pub fn pinv_solve(m: &Mat, rhs: &Mat, rel_tol: f64) -> Result<Mat> {
    if m.nrows() != rhs.nrows() {
        return Err(Error::invalid(format!(
            "pinv_solve: {}x{} matrix against {}x{} right-hand side",
            m.nrows(),
            m.ncols(),
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    let pr = pseudo_inverse(m, rel_tol)?;
    if m.is_square() && pr.rank == m.nrows() && m.nrows() > 0 {
        if let Some(x) = m.clone().lu().solve(rhs) {
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
    }
    Ok(&pr.pinv * rhs)
}

/// Tests `range(N) ⊆ range(M)` via `‖(I − M M†) N‖_max ≤ tol · max(1, ‖N‖_max)`.
pub fn range_inclusion(n: &Mat, m: &Mat, tol: f64) -> Result<bool> {
    if n.nrows() != m.nrows() {
        return Err(Error::invalid(format!(
            "range_inclusion: N has {} rows, M has {}",
            n.nrows(),
            m.nrows()
        )));
    }
    ensure_finite(n, "N")?;
    if n.ncols() == 0 || n.nrows() == 0 {
        return Ok(true);
    }
    let scale = max_abs(n).max(1.0);
    let projected = m * pinv_solve(m, n, 0.0)?;
    Ok(max_abs(&(n - projected)) <= tol * scale)
}

/// Semidefiniteness of the symmetric part of `m`.
///
/// Fails when `m` is further than `10⁶ · tol` from symmetric.
pub fn definiteness(m: &Mat, mode: Definiteness, tol: f64) -> Result<bool> {
    ensure_finite(m, "matrix")?;
    if !m.is_square() {
        return Err(Error::invalid("definiteness test needs a square matrix"));
    }
    if m.nrows() == 0 {
        return Ok(true);
    }
    let asym = asymmetry(m);
    if asym > 1e6 * tol {
        return Err(Error::invalid(format!(
            "matrix is not symmetric (asymmetry {asym:e})"
        )));
    }
    let (lo, hi) = eigen_range(&symmetrize(m));
    Ok(match mode {
        Definiteness::Psd => lo >= -tol,
        Definiteness::Nsd => hi <= tol,
    })
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_range(sym: &Mat) -> (f64, f64) {
    if sym.nrows() == 0 {
        return (0.0, 0.0);
    }
    if sym.nrows() == 1 {
        return (sym[(0, 0)], sym[(0, 0)]);
    }
    let ev = sym.clone().symmetric_eigenvalues();
    let lo = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Smallest singular value (infinite for an empty matrix).
pub fn min_singular_value(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return f64::INFINITY;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    singular_triplets(m).0.last().copied().unwrap_or(0.0)
}

/// One `rows×cols` matrix per grid node, stored flat and row-major for the
/// path-simulation inner loops.
#[derive(Clone, Debug)]
pub(crate) struct NodeStack {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl NodeStack {
    pub(crate) fn new(rows: usize, cols: usize, mats: impl IntoIterator<Item = Mat>) -> Self {
        let mut data = Vec::new();
        for m in mats {
            debug_assert_eq!(m.shape(), (rows, cols));
            for i in 0..rows {
                for j in 0..cols {
                    data.push(m[(i, j)]);
                }
            }
        }
        NodeStack { rows, cols, data }
    }

    pub(crate) fn nodes(&self) -> usize {
        self.data.len() / (self.rows * self.cols).max(1)
    }

    pub(crate) fn at(&self, k: usize) -> &[f64] {
        let len = self.rows * self.cols;
        &self.data[k * len..(k + 1) * len]
    }

    /// `out += M_k x`.
    #[inline]
    pub(crate) fn mul_add(&self, k: usize, x: &[f64], out: &mut [f64]) {
        let m = self.at(k);
        for (i, o) in out.iter_mut().enumerate().take(self.rows) {
            let row = &m[i * self.cols..(i + 1) * self.cols];
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// `xᵀ M_k y`.
    #[inline]
    pub(crate) fn bilinear(&self, k: usize, x: &[f64], y: &[f64]) -> f64 {
        let m = self.at(k);
        let mut acc = 0.0;
        for (i, xi) in x.iter().enumerate().take(self.rows) {
            let row = &m[i * self.cols..(i + 1) * self.cols];
            acc += xi * row.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
        }
        acc
    }
}

//! Numerical square-integrability test for gains that may blow up where
//! `R + DᵀPD` becomes singular.
//!
//! Runs of near-singular nodes are reduced to one singular point each. For
//! each point the integral of the squared gain is taken over the horizon minus neighborhoods
//! of radius `εⱼ = 2⁻ʲ ε₀`, `j = 0..levels`. A square-integrable gain gives
//! increments that shrink as the neighborhoods do; a divergent one gives
//! increments that stay put or grow.

use serde::Serialize;

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LadderConfig {
    /// A node is near-singular when the smallest singular value of the
    /// weight matrix is below this.
    pub singular_threshold: f64,
    /// `ε₀` as a fraction of the horizon length.
    pub eps0_fraction: f64,
    pub levels: usize,
    /// Growth is only judged once this many halvings have been made.
    pub min_halvings: usize,
    /// Divergent when the last increment exceeds `growth_ratio` times the
    /// first.
    pub growth_ratio: f64,
    /// Divergent when the truncated integral exceeds this.
    pub cap: f64,
    /// Simpson panels across the whole horizon for the outer integral.
    pub base_panels: usize,
    /// Simpson panels per ladder annulus.
    pub annulus_panels: usize,
}

impl Default for LadderConfig {
    fn default() -> Self {
        LadderConfig {
            singular_threshold: 1e-6,
            eps0_fraction: 1.0 / 16.0,
            levels: 12,
            min_halvings: 8,
            growth_ratio: 1.0,
            cap: 1e8,
            base_panels: 2048,
            annulus_panels: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum L2Verdict {
    SquareIntegrable {
        /// Integral over the horizon minus the smallest excised neighborhoods.
        integral: f64,
    },
    Divergent {
        location: f64,
        /// `log₂` of the ratio of the last two ladder increments; about 1
        /// for a `1/|s − s*|` gain.
        growth_estimate: f64,
    },
}

impl L2Verdict {
    pub fn is_square_integrable(&self) -> bool {
        matches!(self, L2Verdict::SquareIntegrable { .. })
    }
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if !(b > a) {
        return 0.0;
    }
    let n = panels.max(2) + panels % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

/// Locations of near-singular points: the node of smallest singular value
/// in each run of flagged nodes. Points closer than `2ε₀` are merged,
/// keeping the more singular one.
fn singular_points(grid: &[f64], sigma: &[f64], threshold: f64, eps0: f64) -> Vec<f64> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut k = 0;
    while k < grid.len() {
        if sigma[k] < threshold {
            let mut best = k;
            while k + 1 < grid.len() && sigma[k + 1] < threshold {
                k += 1;
                if sigma[k] < sigma[best] {
                    best = k;
                }
            }
            let cand = (grid[best], sigma[best]);
            match out.last_mut() {
                Some(prev) if cand.0 - prev.0 <= 2.0 * eps0 => {
                    if cand.1 < prev.1 {
                        *prev = cand;
                    }
                }
                _ => out.push(cand),
            }
        }
        k += 1;
    }
    out.into_iter().map(|(s, _)| s).collect()
}

/// Runs the ladder for `integrand` (the squared Frobenius norm of the gain)
/// given per-node smallest singular values `sigma` on `grid`.
pub fn l2_ladder(
    grid: &[f64],
    sigma: &[f64],
    integrand: impl Fn(f64) -> f64,
    cfg: &LadderConfig,
) -> L2Verdict {
    let f = |s: f64| {
        let v = integrand(s);
        if v.is_finite() {
            v
        } else {
            f64::MAX / 1e10
        }
    };
    let (t0, t1) = (grid[0], grid[grid.len() - 1]);
    let len = t1 - t0;
    let eps0 = cfg.eps0_fraction * len;
    let points = singular_points(grid, sigma, cfg.singular_threshold, eps0);

    // Outer integral over the complement of the ε₀-neighborhoods.
    let mut pieces = Vec::new();
    let mut cursor = t0;
    for &c in &points {
        let a = (c - eps0).max(t0);
        if a > cursor {
            pieces.push((cursor, a));
        }
        cursor = cursor.max((c + eps0).min(t1));
    }
    if cursor < t1 {
        pieces.push((cursor, t1));
    }
    let mut total: f64 = pieces
        .iter()
        .map(|&(a, b)| {
            let panels = ((b - a) / len * cfg.base_panels as f64).ceil() as usize;
            simpson(&f, a, b, panels.max(16))
        })
        .sum();
    if total > cfg.cap {
        return L2Verdict::Divergent {
            location: points.first().copied().unwrap_or(t0),
            growth_estimate: f64::INFINITY,
        };
    }

    for &c in &points {
        let mut increments = Vec::with_capacity(cfg.levels);
        for j in 1..=cfg.levels {
            let outer = eps0 / f64::powi(2.0, j as i32 - 1);
            let inner = outer / 2.0;
            let left = simpson(&f, (c - outer).max(t0), (c - inner).max(t0), cfg.annulus_panels);
            let right = simpson(&f, (c + inner).min(t1), (c + outer).min(t1), cfg.annulus_panels);
            increments.push(left + right);
            total += left + right;
            if total > cfg.cap {
                return L2Verdict::Divergent {
                    location: c,
                    growth_estimate: growth(&increments),
                };
            }
        }
        let first = increments[0];
        let last = increments[increments.len() - 1];
        let floor = 1e-12 * total.max(1.0);
        if increments.len() >= cfg.min_halvings && last > cfg.growth_ratio * first && last > floor {
            return L2Verdict::Divergent {
                location: c,
                growth_estimate: growth(&increments),
            };
        }
    }
    L2Verdict::SquareIntegrable { integral: total }
}

fn growth(increments: &[f64]) -> f64 {
    match increments {
        [.., a, b] if *a > 0.0 && *b > 0.0 => (b / a).log2(),
        _ => f64::INFINITY,
    }
}

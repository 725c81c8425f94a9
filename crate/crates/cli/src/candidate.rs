//! Parsing of `--p` candidate solutions.
//!
//! Accepted forms, for an `n×n` problem:
//!
//! - `const:<v>`: `v·I`.
//! - `poly:[c0, c1, ...]`: `(c0 + c1 s + ...)·I`.
//! - `rational:[n0, ...]/[d0, ...]`: ratio of two such polynomials, times `I`.
//! - inline JSON or a path to a JSON file holding a coefficient in the
//!   problem-file format (`{"const": ...}`, `{"rational": ...}` or
//!   `{"grid": ...}`).

use anyhow::{bail, Context, Result};
use serde_json::Value;

use lqgame::matrix::Mat;
use lqgame::problem::{parse_matrix_function, MatrixFunction, ScalarExpr};

fn coeff_list(s: &str, what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = serde_json::from_str(s.trim())
        .with_context(|| format!("{what}: expected a JSON list of numbers, got `{s}`"))?;
    if v.is_empty() {
        bail!("{what}: empty coefficient list");
    }
    Ok(v)
}

fn times_identity(e: ScalarExpr, n: usize) -> Result<MatrixFunction> {
    if n == 1 {
        return Ok(MatrixFunction::scalar(e));
    }
    let zero = ScalarExpr::constant(0.0);
    let entries = (0..n * n)
        .map(|k| if k / n == k % n { e.clone() } else { zero.clone() })
        .collect();
    Ok(MatrixFunction::from_exprs(n, n, entries)?)
}

pub fn parse_candidate(spec: &str, n: usize) -> Result<MatrixFunction> {
    let spec = spec.trim();
    if let Some(v) = spec.strip_prefix("const:") {
        let c: f64 = v
            .trim()
            .parse()
            .with_context(|| format!("const: `{v}` is not a number"))?;
        return Ok(MatrixFunction::constant(&(Mat::identity(n, n) * c)));
    }
    if let Some(v) = spec.strip_prefix("poly:") {
        return times_identity(ScalarExpr::poly(coeff_list(v, "poly")?), n);
    }
    if let Some(v) = spec.strip_prefix("rational:") {
        let Some((num, den)) = v.split_once("]/[") else {
            bail!("rational: expected `[num...]/[den...]`");
        };
        let num = coeff_list(&format!("{num}]"), "rational numerator")?;
        let den = coeff_list(&format!("[{den}"), "rational denominator")?;
        if den.iter().all(|c| *c == 0.0) {
            bail!("rational: zero denominator");
        }
        return times_identity(ScalarExpr::rational(num, den), n);
    }
    let text = if spec.starts_with('{') {
        spec.to_string()
    } else {
        std::fs::read_to_string(spec)
            .with_context(|| format!("`{spec}` is not a candidate form or a readable file"))?
    };
    let v: Value = serde_json::from_str(&text).context("candidate JSON")?;
    Ok(parse_matrix_function(&v, n, n, "$")?)
}

#![allow(dead_code)]

use lqgame::matrix::Mat;
use lqgame::problem::{assemble, builtin, GameProblem, MatrixFunction, StackedProblem};

pub fn scalar(c: f64) -> MatrixFunction {
    MatrixFunction::constant(&Mat::from_element(1, 1, c))
}

pub fn builtin_problem(name: &str) -> StackedProblem {
    assemble(&builtin(name).unwrap()).unwrap()
}

/// One-player tracking problem on `[0, 1]`:
/// `dX = (u + 1) ds + σ dW`, payoff `½ E[X(1)² + ∫ u² ds]`.
///
/// Hand solution: `P = 1/(2 − s)`, `η = (1 − s)/(2 − s)` and
/// `V(0, x) = ¼ (x + 1)² + ½ σ² ln 2`.
pub fn drift_problem(sigma: f64) -> StackedProblem {
    let mut p = GameProblem::zeros("drift", 0.0, 1.0, 1, 1, 0);
    p.b1 = scalar(1.0);
    p.r11 = scalar(1.0);
    p.drift_offset = scalar(1.0);
    p.diffusion_offset = scalar(sigma);
    p.terminal = Mat::from_element(1, 1, 1.0);
    assemble(&p).unwrap()
}

pub fn drift_p(s: f64) -> f64 {
    1.0 / (2.0 - s)
}

pub fn drift_eta(s: f64) -> f64 {
    (1.0 - s) / (2.0 - s)
}

pub fn drift_value(x: f64, sigma: f64) -> f64 {
    0.25 * (x + 1.0) * (x + 1.0) + 0.5 * sigma * sigma * std::f64::consts::LN_2
}

/// Uncontrolled geometric Brownian motion `dX = aX ds + cX dW` as a
/// one-player problem whose control does not enter.
pub fn gbm_problem(a: f64, c: f64) -> StackedProblem {
    let mut p = GameProblem::zeros("gbm", 0.0, 1.0, 1, 1, 0);
    p.a = scalar(a);
    p.c = scalar(c);
    p.r11 = scalar(1.0);
    p.terminal = Mat::from_element(1, 1, 1.0);
    assemble(&p).unwrap()
}

//! Linear-quadratic two-person zero-sum stochastic differential games.
//!
//! The crate integrates and audits the game Riccati equation, solves the
//! adjoint equation for deterministic inhomogeneous data, builds closed-loop
//! saddle strategies together with the value function, and checks saddle,
//! stationarity and convexity-concavity properties by Euler–Maruyama Monte
//! Carlo with common random numbers.
//!
//! Module map:
//!
//! - [`matrix`]: pseudo-inverse, range inclusion and definiteness tests.
//! - [`problem`]: coefficient representation, validation, block stacking,
//!   built-in examples and the JSON problem format.
//! - [`riccati`]: backward RK4 integration, residual verification and the
//!   regularity audit.
//! - [`adjoint`]: the backward equation for `eta` and the value function.
//! - [`strategy`]: closed-loop saddle gains and adjoint reconstruction along
//!   simulated paths.
//! - [`simulate`]: Brownian batches, path simulation and statistical probes.
//! - [`exec`]: sequential / rayon execution policy for path loops.

pub mod adjoint;
pub mod error;
pub mod exec;
pub mod ladder;
pub mod matrix;
pub mod problem;
pub mod riccati;
pub mod simulate;
pub mod strategy;

pub use error::{Error, Result};
pub use exec::Execution;

//! The JSON run report and its sub-records.

use serde::Serialize;

use lqgame::problem::StackedProblem;
use lqgame::riccati::{RegularityReport, RiccatiSolution, SolutionSource};
use lqgame::simulate::{
    ConvexityOutcome, DivergenceFit, MCEstimate, SaddleReport, StationarityResidual,
};
use lqgame::strategy::ClosedLoopStrategy;

/// Exit codes shared by every command.
pub mod exit {
    pub const OK: i32 = 0;
    /// Malformed or invalid input.
    pub const INVALID: i32 = 1;
    /// The problem has no closed-loop saddle point (or the candidate is not
    /// a regular solution).
    pub const NOT_REGULAR: i32 = 2;
    /// Numerical blow-up.
    pub const NUMERIC: i32 = 3;
    /// A sign was expected but the estimate is within 3 standard errors of 0.
    pub const INCONCLUSIVE: i32 = 4;
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub problem: ProblemInfo,
    pub config: ConfigInfo,
    pub riccati: Option<RiccatiInfo>,
    pub regularity: Option<RegularityReport>,
    pub strategy: Option<StrategyInfo>,
    /// `V(t₀, x)` for each requested initial state.
    pub value: Vec<ValueSample>,
    pub simulation: Option<SimulationSummary>,
    pub verdicts: Vec<Verdict>,
    pub files: Vec<String>,
    pub exit_code: i32,
}

impl RunReport {
    pub fn new(command: &str, problem: ProblemInfo, config: ConfigInfo) -> Self {
        RunReport {
            tool: "lqgame",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            problem,
            config,
            riccati: None,
            regularity: None,
            strategy: None,
            value: Vec::new(),
            simulation: None,
            verdicts: Vec::new(),
            files: Vec::new(),
            exit_code: exit::OK,
        }
    }

    pub fn verdict(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.verdicts.push(Verdict {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    /// Raises the exit code; the first non-zero code wins.
    pub fn fail_with(&mut self, code: i32) {
        if self.exit_code == exit::OK {
            self.exit_code = code;
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProblemInfo {
    pub name: String,
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    pub t0: f64,
    pub t_end: f64,
    pub homogeneous: bool,
}

impl ProblemInfo {
    pub fn of(sp: &StackedProblem) -> Self {
        ProblemInfo {
            name: sp.problem().name.clone(),
            n: sp.n(),
            m1: sp.m1(),
            m2: sp.m2(),
            t0: sp.t0(),
            t_end: sp.t_end(),
            homogeneous: sp.problem().is_homogeneous(),
        }
    }
}

/// Effective configuration. The output directory is left out so that the
/// report does not depend on where it is written.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ConfigInfo {
    pub steps: usize,
    pub threads: usize,
    pub tol_range: f64,
    pub tol_sign: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub player: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RiccatiInfo {
    pub source: SolutionSource,
    pub nodes: usize,
    pub complete: bool,
    pub blowup: Option<f64>,
    pub max_asymmetry: f64,
    /// `P(t₀)` row-major (or at the earliest covered node after blow-up).
    pub p_start: Vec<f64>,
    /// Largest Riccati residual (candidates only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
}

impl RiccatiInfo {
    pub fn of(p: &RiccatiSolution) -> Self {
        RiccatiInfo {
            source: p.source,
            nodes: p.grid.len(),
            complete: p.is_complete(),
            blowup: p.blowup,
            max_asymmetry: p.max_asymmetry(),
            p_start: row_major(&p.values[0]),
            residual: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StrategyInfo {
    pub built: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refusal: Option<String>,
    /// `Θ(t₀)` row-major.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_start: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_start: Option<Vec<f64>>,
}

impl StrategyInfo {
    pub fn built(st: &ClosedLoopStrategy) -> Self {
        StrategyInfo {
            built: true,
            refusal: None,
            theta_start: Some(row_major(&st.theta[0])),
            v_start: Some(st.v[0].iter().cloned().collect()),
        }
    }

    pub fn refused(why: String) -> Self {
        StrategyInfo {
            built: false,
            refusal: Some(why),
            theta_start: None,
            v_start: None,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ValueSample {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BatchInfo {
    pub seed: u64,
    pub n_paths: usize,
    pub steps: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvexityRecord {
    pub player: usize,
    pub control: String,
    #[serde(flatten)]
    pub outcome: ConvexityOutcome,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SimulationSummary {
    SaddleTest {
        batch: BatchInfo,
        x0: Vec<f64>,
        /// Monte Carlo payoff at the saddle next to `V(t₀, x0)`.
        value: f64,
        report: SaddleReport,
    },
    Stationarity {
        batch: BatchInfo,
        x0: Vec<f64>,
        saddle: StationarityResidual,
        zero_strategy: StationarityResidual,
        tolerance: f64,
    },
    Convexity {
        batch: BatchInfo,
        probes: Vec<ConvexityRecord>,
    },
    Divergence {
        batch: BatchInfo,
        x0: Vec<f64>,
        player: usize,
        fit: DivergenceFit,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Convenience for reports: `MCEstimate` as `mean ± stderr`.
pub fn fmt_estimate(e: &MCEstimate) -> String {
    format!("{} ± {}", e.mean, e.stderr)
}

fn row_major(m: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

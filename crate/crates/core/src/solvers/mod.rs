//! TR-RGD, TR-RCG, the ALS baseline, stopping rules and run logs.

mod als;
mod invariants;
mod rank;
mod riemannian;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::linesearch::{LineSearchParams, RbbBounds, RbbVariant};
use crate::metric::DEFAULT_DELTA;
use crate::metrics::rel_error_on;
use crate::objective::SparseSample;
use crate::ring::{TrPoint, TrRank};

pub use als::{als_mode_update, tr_als};
pub use invariants::{check_convergence_invariants, InvariantReport, Violation};
pub use rank::{rank_increase_drive, RankSchedule};
pub use riemannian::{tr_rcg, tr_rgd};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Rgd,
    Rcg,
    Als,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Rgd => "rgd",
            Algorithm::Rcg => "rcg",
            Algorithm::Als => "als",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgd" | "tr-rgd" => Ok(Algorithm::Rgd),
            "rcg" | "tr-rcg" => Ok(Algorithm::Rcg),
            "als" | "tr-als" => Ok(Algorithm::Als),
            other => Err(Error::InvalidParameter(format!(
                "unknown algorithm '{other}'"
            ))),
        }
    }
}

/// Stepsize rule of the Riemannian solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// Exact minimization of `h(s)` every iteration.
    Exact,
    /// Armijo backtracking from an RBB initial step.
    ArmijoRbb,
}

impl FromStr for StepRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exact" => Ok(StepRule::Exact),
            "armijo" | "rbb" | "armijo-rbb" => Ok(StepRule::ArmijoRbb),
            other => Err(Error::InvalidParameter(format!(
                "unknown step rule '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingCriteria {
    pub eps_relerr: f64,
    pub eps_relchange: f64,
    pub eps_gradnorm: f64,
    pub max_iters: usize,
    pub time_budget: Option<f64>,
}

impl Default for StoppingCriteria {
    fn default() -> Self {
        StoppingCriteria {
            eps_relerr: 1e-12,
            eps_relchange: 1e-8,
            eps_gradnorm: 1e-8,
            max_iters: 250,
            time_budget: None,
        }
    }
}

impl StoppingCriteria {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps_relerr", self.eps_relerr),
            ("eps_relchange", self.eps_relchange),
            ("eps_gradnorm", self.eps_gradnorm),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if let Some(t) = self.time_budget {
            if !(t > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "time budget must be > 0, got {t}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    RelErr,
    RelChange,
    GradNorm,
    MaxIters,
    TimeBudget,
    Stalled,
    /// Rank-increase driver: every mode reached its cap.
    MaxRank,
    /// Rank-increase driver: a full cycle of candidates was rejected.
    NoRankGain,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::RelErr => "relative_error",
            Termination::RelChange => "relative_change",
            Termination::GradNorm => "gradient_norm",
            Termination::MaxIters => "max_iters",
            Termination::TimeBudget => "time_budget",
            Termination::Stalled => "stalled",
            Termination::MaxRank => "max_rank",
            Termination::NoRankGain => "no_rank_gain",
        }
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub delta: f64,
    pub lambda: f64,
    pub line_search: LineSearchParams,
    pub step_rule: StepRule,
    pub rbb: RbbVariant,
    pub rbb_bounds: RbbBounds,
    /// Seed the first Armijo step with an exact line search.
    pub exact_first_step: bool,
    pub seed: u64,
    pub stopping: StoppingCriteria,
    pub rank_schedule: Option<RankSchedule>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            algorithm: Algorithm::Rgd,
            delta: DEFAULT_DELTA,
            lambda: 0.0,
            line_search: LineSearchParams::default(),
            step_rule: StepRule::ArmijoRbb,
            rbb: RbbVariant::Rbb2,
            rbb_bounds: RbbBounds::default(),
            exact_first_step: true,
            seed: 0,
            stopping: StoppingCriteria::default(),
            rank_schedule: None,
        }
    }
}

impl SolverConfig {
    pub fn new(algorithm: Algorithm) -> Self {
        SolverConfig {
            algorithm,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta must be > 0, got {}",
                self.delta
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        self.line_search.validate()?;
        self.stopping.validate()
    }
}

/// One logged iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub time_s: f64,
    pub f: f64,
    /// `NaN` when `P_Omega(A) = 0`.
    pub eps_omega: f64,
    pub eps_gamma: Option<f64>,
    /// `||grad f||_F` of the Riemannian gradient.
    pub grad_norm: Option<f64>,
    pub step: Option<f64>,
    pub beta: Option<f64>,
    pub w_norm_sq: f64,
    /// `g(grad f, eta)` of the direction that produced this iterate.
    pub descent: Option<f64>,
    /// `||grad f||_W^2` at the point that direction started from.
    pub prev_grad_metric_sq: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub iters: Vec<IterRecord>,
    pub termination: Termination,
    pub lambda: f64,
    pub line_search: LineSearchParams,
    pub final_rank: Option<TrRank>,
}

impl RunRecord {
    pub fn last(&self) -> &IterRecord {
        self.iters
            .last()
            .expect("a run record holds at least the initial iterate")
    }

    pub fn f0(&self) -> f64 {
        self.iters[0].f
    }

    /// Number of iterations performed (the initial iterate is not counted).
    pub fn iterations(&self) -> usize {
        self.last().iter
    }

    pub fn seconds(&self) -> f64 {
        self.last().time_s
    }
}

/// Per-run evaluation context shared by the solvers.
pub(crate) struct Tracker<'a> {
    data: &'a SparseSample,
    test: Option<&'a SparseSample>,
    data_norm: f64,
    start: Instant,
    stopping: StoppingCriteria,
    prev_eps: Option<f64>,
}

impl<'a> Tracker<'a> {
    pub(crate) fn new(
        data: &'a SparseSample,
        test: Option<&'a SparseSample>,
        stopping: StoppingCriteria,
    ) -> Self {
        Tracker {
            data,
            test,
            data_norm: data.value_norm(),
            start: Instant::now(),
            stopping,
            prev_eps: None,
        }
    }

    pub(crate) fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    pub(crate) fn eps_omega(&self, residual_norm: f64) -> f64 {
        if self.data_norm > 0.0 {
            residual_norm / self.data_norm
        } else {
            f64::NAN
        }
    }

    pub(crate) fn eps_gamma(&self, p: &TrPoint) -> Result<Option<f64>> {
        match self.test {
            Some(t) if !t.is_empty() && t.value_norm() > 0.0 => Ok(Some(rel_error_on(t, p)?)),
            _ => Ok(None),
        }
    }

    /// Error-based stopping tests, applied after logging an iterate.
    pub(crate) fn check(&mut self, eps: f64, grad_norm: Option<f64>) -> Option<Termination> {
        let prev = self.prev_eps.replace(eps);
        if eps < self.stopping.eps_relerr {
            return Some(Termination::RelErr);
        }
        if let Some(g) = grad_norm {
            if g < self.stopping.eps_gradnorm {
                return Some(Termination::GradNorm);
            }
        }
        if let Some(prev) = prev {
            if eps > 0.0 && ((eps - prev) / eps).abs() < self.stopping.eps_relchange {
                return Some(Termination::RelChange);
            }
        }
        None
    }

    /// Budget tests, applied before starting iteration `t` (1-based).
    pub(crate) fn budget(&self, t: usize) -> Option<Termination> {
        if t > self.stopping.max_iters {
            return Some(Termination::MaxIters);
        }
        if let Some(b) = self.stopping.time_budget {
            if self.elapsed() >= b {
                return Some(Termination::TimeBudget);
            }
        }
        None
    }

    pub(crate) fn data(&self) -> &SparseSample {
        self.data
    }
}

pub(crate) fn check_problem(init: &TrPoint, data: &SparseSample, cfg: &SolverConfig) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySet("training set"));
    }
    data.check_point(init)
}

/// Runs the solver named by `cfg.algorithm`.
pub fn solve(
    init: &TrPoint,
    data: &SparseSample,
    test: Option<&SparseSample>,
    cfg: &SolverConfig,
) -> Result<(TrPoint, RunRecord)> {
    match cfg.algorithm {
        Algorithm::Rgd => tr_rgd(init, data, test, cfg),
        Algorithm::Rcg => tr_rcg(init, data, test, cfg),
        Algorithm::Als => tr_als(init, data, test, cfg),
    }
}

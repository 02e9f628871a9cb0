//! Flat key/value experiment configuration. Every key has a command-line
//! flag of the same name (with dashes), and flags win over the file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use trcomp::datagen::FunctionKind;
use trcomp::linesearch::{LineSearchParams, RbbVariant};
use trcomp::metric::DEFAULT_DELTA;
use trcomp::solvers::RankSchedule;
use trcomp::{Algorithm, Shape, SolverConfig, StepRule, StoppingCriteria, TrRank};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Noiseless,
    Noisy,
    Phase,
    Function,
    CompleteFile,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::Noiseless => "noiseless",
            Experiment::Noisy => "noisy",
            Experiment::Phase => "phase",
            Experiment::Function => "function",
            Experiment::CompleteFile => "complete-file",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A rank given either as one value for every mode or per mode.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
pub enum RankSpec {
    Uniform(usize),
    PerMode(Vec<usize>),
}

impl RankSpec {
    pub fn resolve(&self, order: usize) -> Result<TrRank> {
        let r = match self {
            RankSpec::Uniform(r) => TrRank::uniform(order, *r)?,
            RankSpec::PerMode(v) if v.len() == order => TrRank::new(v.clone())?,
            RankSpec::PerMode(v) => {
                return Err(CliError::Config(format!(
                    "rank has {} entries for an order-{order} tensor",
                    v.len()
                )))
            }
        };
        Ok(r)
    }
}

impl FromStr for RankSpec {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        let v = parse_list(s)?;
        Ok(match v.as_slice() {
            [r] => RankSpec::Uniform(*r),
            _ => RankSpec::PerMode(v),
        })
    }
}

/// Parses `20,20,20` or `20x20x20`.
pub fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split([',', 'x'])
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("bad integer '{t}' in '{s}'")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub shape: Vec<usize>,
    pub rank: RankSpec,
    pub max_rank: Option<RankSpec>,
    pub p: Option<f64>,
    pub samples: Option<usize>,
    pub test_size: usize,
    pub validation_fraction: f64,
    pub sigma: f64,
    pub lambda: f64,
    pub delta: f64,
    pub algorithm: String,
    pub step_rule: String,
    pub rbb: String,
    pub exact_first_step: bool,
    pub armijo_rho: f64,
    pub armijo_a: f64,
    pub armijo_s_min: f64,
    pub max_backtracks: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub time_budget: Option<f64>,
    pub eps_relerr: f64,
    pub eps_relchange: f64,
    pub eps_gradnorm: f64,
    pub phase_iters: usize,
    pub function: String,
    pub phase_order: usize,
    pub phase_extents: Vec<usize>,
    pub phase_samples: Vec<usize>,
    pub phase_trials: usize,
    pub success_tol: f64,
    pub input: Option<PathBuf>,
    pub test_input: Option<PathBuf>,
    pub out: PathBuf,
    /// Record wall-clock time in `run.csv`; off keeps reruns byte-identical.
    pub timing: bool,
    pub plotdata: bool,
    /// Exit with an error when a solver stalls.
    pub strict: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let ls = LineSearchParams::default();
        let st = StoppingCriteria::default();
        ExperimentConfig {
            experiment: Experiment::Noiseless,
            shape: vec![20, 20, 20],
            rank: RankSpec::Uniform(2),
            max_rank: None,
            p: None,
            samples: None,
            test_size: 100,
            validation_fraction: 0.05,
            sigma: 0.0,
            lambda: 0.0,
            delta: DEFAULT_DELTA,
            algorithm: "rgd".into(),
            step_rule: "armijo".into(),
            rbb: "rbb2".into(),
            exact_first_step: true,
            armijo_rho: ls.rho,
            armijo_a: ls.a,
            armijo_s_min: ls.s_min,
            max_backtracks: ls.max_backtracks,
            seed: 0,
            max_iters: st.max_iters,
            time_budget: None,
            eps_relerr: st.eps_relerr,
            eps_relchange: st.eps_relchange,
            eps_gradnorm: st.eps_gradnorm,
            phase_iters: 50,
            function: "h1".into(),
            phase_order: 3,
            phase_extents: vec![10, 12, 14, 16, 18],
            phase_samples: vec![100, 200, 400, 600, 800],
            phase_trials: 5,
            success_tol: 1e-4,
            input: None,
            test_input: None,
            out: PathBuf::from("out"),
            timing: false,
            plotdata: false,
            strict: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn shape(&self) -> Result<Shape> {
        Ok(Shape::new(self.shape.clone())?)
    }

    pub fn tr_rank(&self, order: usize) -> Result<TrRank> {
        self.rank.resolve(order)
    }

    pub fn algorithm(&self) -> Result<Algorithm> {
        Ok(self.algorithm.parse()?)
    }

    pub fn function_kind(&self) -> Result<FunctionKind> {
        Ok(self.function.parse()?)
    }

    /// Solver settings for a tensor of the given order.
    pub fn solver(&self, order: usize) -> Result<SolverConfig> {
        let rank_schedule = match &self.max_rank {
            Some(m) => Some(RankSchedule {
                phase_iters: self.phase_iters,
                ..RankSchedule::new(m.resolve(order)?)
            }),
            None => None,
        };
        let cfg = SolverConfig {
            algorithm: self.algorithm()?,
            delta: self.delta,
            lambda: self.lambda,
            line_search: LineSearchParams {
                rho: self.armijo_rho,
                a: self.armijo_a,
                s_min: self.armijo_s_min,
                max_backtracks: self.max_backtracks,
            },
            step_rule: self.step_rule.parse::<StepRule>()?,
            rbb: self.rbb.parse::<RbbVariant>()?,
            exact_first_step: self.exact_first_step,
            seed: self.seed,
            stopping: StoppingCriteria {
                eps_relerr: self.eps_relerr,
                eps_relchange: self.eps_relchange,
                eps_gradnorm: self.eps_gradnorm,
                max_iters: self.max_iters,
                time_budget: self.time_budget,
            },
            rank_schedule,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let e = self.experiment;
        if self.sigma != 0.0 && e != Experiment::Noisy {
            return bad(format!("sigma is only used by noisy runs, not {e}"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be >= 0, got {}", self.sigma));
        }
        if self.p.is_some() && self.samples.is_some() {
            return bad("give either p or samples, not both".into());
        }
        if let Some(p) = self.p {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("p must be in (0, 1], got {p}"));
            }
        }
        match e {
            Experiment::Noiseless | Experiment::Noisy | Experiment::Function => {
                if self.p.is_none() && self.samples.is_none() {
                    return bad(format!("{e} runs need p or samples"));
                }
                let order = self.shape()?.order();
                self.tr_rank(order)?;
                self.solver(order)?;
            }
            Experiment::Phase => {
                if self.phase_extents.is_empty() || self.phase_samples.is_empty() {
                    return bad("phase runs need phase_extents and phase_samples".into());
                }
                if self.phase_trials == 0 {
                    return bad("phase_trials must be positive".into());
                }
                if !matches!(self.rank, RankSpec::Uniform(_)) {
                    return bad("phase runs take a single rank value".into());
                }
                if self.max_rank.is_some() {
                    return bad("phase runs use a fixed rank".into());
                }
                self.solver(self.phase_order)?;
            }
            Experiment::CompleteFile => {
                if self.input.is_none() {
                    return bad("complete-file runs need an input file".into());
                }
            }
        }
        if e == Experiment::Function {
            self.function_kind()?;
        }
        if self.max_rank.is_some() && !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must be in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        Ok(())
    }
}

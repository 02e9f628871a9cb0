use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::warn;
use trcomp::Shape;
use trcomp_cli::config::{parse_list, Experiment, ExperimentConfig, RankSpec};
use trcomp_cli::{param_count, run_experiment};

#[derive(Parser)]
#[command(name = "trcomp", version, about = "Tensor-ring completion experiments")]
struct Cli {
    /// Flat TOML experiment file; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Complete a tensor given as a coordinate file.
    Complete(Overrides),
    /// Noiseless synthetic TR tensor.
    Synth(Overrides),
    /// Synthetic TR tensor with normalized Gaussian noise.
    Noisy(Overrides),
    /// Recovery success counts over a grid of sizes and sample counts.
    Phase(Overrides),
    /// Function values on a uniform grid.
    Function(Overrides),
    /// Print the TR parameter count of a shape and rank.
    Params {
        #[arg(long)]
        shape: String,
        #[arg(long)]
        rank: String,
    },
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    rank: Option<String>,
    #[arg(long)]
    max_rank: Option<String>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    step_rule: Option<String>,
    #[arg(long)]
    rbb: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    exact_first_step: Option<bool>,
    #[arg(long)]
    armijo_rho: Option<f64>,
    #[arg(long)]
    armijo_a: Option<f64>,
    #[arg(long)]
    armijo_s_min: Option<f64>,
    #[arg(long)]
    max_backtracks: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    time_budget: Option<f64>,
    #[arg(long)]
    eps_relerr: Option<f64>,
    #[arg(long)]
    eps_relchange: Option<f64>,
    #[arg(long)]
    eps_gradnorm: Option<f64>,
    #[arg(long)]
    phase_iters: Option<usize>,
    #[arg(long)]
    function: Option<String>,
    #[arg(long)]
    phase_order: Option<usize>,
    #[arg(long)]
    phase_extents: Option<String>,
    #[arg(long)]
    phase_samples: Option<String>,
    #[arg(long)]
    phase_trials: Option<usize>,
    #[arg(long)]
    success_tol: Option<f64>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    test_input: Option<PathBuf>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    timing: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    plotdata: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    strict: Option<bool>,
}

macro_rules! set {
    ($cfg:ident, $o:ident; $($f:ident),* $(,)?) => {
        $(if let Some(v) = $o.$f { $cfg.$f = v; })*
    };
}

impl Overrides {
    fn apply(self, cfg: &mut ExperimentConfig) -> anyhow::Result<()> {
        if let Some(s) = &self.shape {
            cfg.shape = parse_list(s)?;
        }
        if let Some(r) = &self.rank {
            cfg.rank = r.parse()?;
        }
        if let Some(r) = &self.max_rank {
            cfg.max_rank = Some(r.parse()?);
        }
        if let Some(p) = self.p {
            cfg.p = Some(p);
            cfg.samples = None;
        }
        if let Some(m) = self.samples {
            cfg.samples = Some(m);
            cfg.p = None;
        }
        if let Some(t) = self.time_budget {
            cfg.time_budget = Some(t);
        }
        if let Some(s) = &self.phase_extents {
            cfg.phase_extents = parse_list(s)?;
        }
        if let Some(s) = &self.phase_samples {
            cfg.phase_samples = parse_list(s)?;
        }
        if let Some(i) = &self.input {
            cfg.input = Some(i.clone());
        }
        if let Some(i) = &self.test_input {
            cfg.test_input = Some(i.clone());
        }
        let o = self;
        set!(cfg, o; test_size, validation_fraction, sigma, lambda, delta, algorithm,
            step_rule, rbb, exact_first_step, armijo_rho, armijo_a, armijo_s_min,
            max_backtracks, max_iters, eps_relerr, eps_relchange, eps_gradnorm,
            phase_iters, function, phase_order, phase_trials, success_tol, timing,
            plotdata, strict);
        Ok(())
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (experiment, over) = match cli.cmd {
        Command::Params { shape, rank } => {
            let shape = Shape::new(parse_list(&shape)?)?;
            let rank = rank.parse::<RankSpec>()?.resolve(shape.order())?;
            println!("{}", param_count(&shape, &rank)?);
            return Ok(());
        }
        Command::Complete(o) => (Experiment::CompleteFile, o),
        Command::Synth(o) => (Experiment::Noiseless, o),
        Command::Noisy(o) => (Experiment::Noisy, o),
        Command::Phase(o) => (Experiment::Phase, o),
        Command::Function(o) => (Experiment::Function, o),
    };
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = experiment;
    over.apply(&mut cfg)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    let outcome = run_experiment(&cfg)?;
    println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
    if let Some(counts) = &outcome.phase {
        for (n, row) in cfg.phase_extents.iter().zip(counts) {
            println!("n = {n}: {row:?}");
        }
    }
    if outcome.stalled() {
        if cfg.strict {
            bail!("solver stalled");
        }
        warn!("solver stalled before meeting a stopping tolerance");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

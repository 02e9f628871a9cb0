use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Serialize, Serializer};
use trcomp::datagen::{
    add_normalized_noise, carve_validation, count_for_rate, default_init, gen_function_tensor,
    gen_tr_random, split_sets, FunctionKind, FunctionTensorSpec, NoiseSpec,
};
use trcomp::metrics::{phase_sweep, psnr, PhaseSweepSpec};
use trcomp::objective::IndexSet;
use trcomp::seed::{SeedStreams, INIT};
use trcomp::solvers::{rank_increase_drive, solve};
use trcomp::{DenseTensor, RunRecord, Shape, SparseSample, Termination, TrPoint, TrRank};

use crate::config::{Experiment, ExperimentConfig, RankSpec};
use crate::coo::parse_coo;
use crate::error::{CliError, Result};
use crate::point::PointFile;
use crate::records::{emit_plotdata, format_phase_csv, write_run_csv};

fn ser_psnr<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_finite() => s.serialize_f64(*x),
        Some(x) if *x > 0.0 => s.serialize_str("inf"),
        _ => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub algorithm: String,
    pub shape: Vec<usize>,
    pub rank: Vec<usize>,
    pub lambda: f64,
    pub delta: f64,
    pub p: Option<f64>,
    pub sigma: f64,
    pub final_eps_omega: Option<f64>,
    pub final_eps_gamma: Option<f64>,
    #[serde(serialize_with = "ser_psnr")]
    pub psnr: Option<f64>,
    pub iters: usize,
    pub seconds: f64,
    pub termination_reason: String,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub summary: Summary,
    pub record: Option<RunRecord>,
    pub point: Option<TrPoint>,
    pub phase: Option<Vec<Vec<usize>>>,
}

impl Outcome {
    pub fn stalled(&self) -> bool {
        self.record
            .as_ref()
            .is_some_and(|r| r.termination == Termination::Stalled)
    }
}

struct Problem {
    data: SparseSample,
    test: Option<SparseSample>,
    truth: Option<DenseTensor>,
    rank: TrRank,
}

/// Runs one configured experiment and writes its artifacts under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Outcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    let outcome = match cfg.experiment {
        Experiment::Phase => run_phase(cfg)?,
        _ => {
            let prob = build_problem(cfg)?;
            run_fit(cfg, prob)?
        }
    };
    write_summary(&cfg.out.join("summary.json"), &outcome.summary)?;
    if let Some(rec) = &outcome.record {
        write_run_csv(&cfg.out.join("run.csv"), rec, cfg.timing)?;
        if cfg.plotdata {
            emit_plotdata(rec, &cfg.out.join("run"))?;
        }
    }
    if let Some(p) = &outcome.point {
        let path = cfg.out.join("point.json");
        let text = serde_json::to_string(&PointFile::from_point(p))?;
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(outcome)
}

fn write_summary(path: &Path, s: &Summary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(s)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn sample_count(cfg: &ExperimentConfig, shape: &Shape, excluded: usize) -> Result<usize> {
    match (cfg.samples, cfg.p) {
        (Some(m), _) => Ok(m),
        (None, Some(p)) => Ok(count_for_rate(shape, p, excluded)?),
        (None, None) => Err(CliError::Config("need p or samples".into())),
    }
}

fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let streams = SeedStreams::new(cfg.seed);
    if cfg.experiment == Experiment::CompleteFile {
        let input = cfg.input.as_deref().expect("validated");
        let data = parse_coo(input)?;
        let test = cfg.test_input.as_deref().map(parse_coo).transpose()?;
        if let Some(t) = &test {
            if t.shape() != data.shape() {
                return Err(CliError::Config(format!(
                    "test file shape {:?} differs from {:?}",
                    t.shape().dims(),
                    data.shape().dims()
                )));
            }
        }
        let rank = cfg.tr_rank(data.shape().order())?;
        return Ok(Problem {
            data,
            test,
            truth: None,
            rank,
        });
    }

    let shape = cfg.shape()?;
    let rank = cfg.tr_rank(shape.order())?;
    let (truth, excluded, observe): (Option<DenseTensor>, Option<IndexSet>, _) =
        match cfg.experiment {
            Experiment::Function => {
                let spec = FunctionTensorSpec::new(cfg.function_kind()?, shape.clone())?;
                let dense = match spec.kind {
                    FunctionKind::H1 => Some(gen_function_tensor(&spec)?),
                    FunctionKind::H2 => None,
                };
                (dense, spec.excluded()?, Some(spec))
            }
            _ => {
                let (_, clean) = gen_tr_random(&shape, &rank, cfg.seed)?;
                let a = if cfg.experiment == Experiment::Noisy {
                    add_normalized_noise(
                        &clean,
                        NoiseSpec {
                            sigma: cfg.sigma,
                            seed: cfg.seed,
                        },
                    )?
                } else {
                    clean
                };
                (Some(a), None, None)
            }
        };
    let n_ex = excluded.as_ref().map_or(0, |e| e.len());
    let count = sample_count(cfg, &shape, n_ex)?;
    let (om, gm) = split_sets(&shape, count, cfg.test_size, excluded.as_ref(), &streams)?;
    let see = |set: &IndexSet| -> Result<SparseSample> {
        match (&observe, &truth) {
            (Some(spec), _) => Ok(spec.observe(set)?),
            (None, Some(t)) => Ok(set.observe(t)?),
            (None, None) => unreachable!("every synthetic run has a target"),
        }
    };
    Ok(Problem {
        data: see(&om)?,
        test: gm.as_ref().map(see).transpose()?,
        truth,
        rank,
    })
}

fn run_fit(cfg: &ExperimentConfig, prob: Problem) -> Result<Outcome> {
    let order = prob.data.shape().order();
    let solver = cfg.solver(order)?;
    let streams = SeedStreams::new(cfg.seed);
    let (point, rec) = if solver.rank_schedule.is_some() {
        let (train, val) = carve_validation(&prob.data, cfg.validation_fraction, &streams)?;
        rank_increase_drive(&train, &val, prob.test.as_ref(), &solver)?
    } else {
        let init = default_init(&prob.data, &prob.rank, &mut streams.stream(INIT))?;
        solve(&init, &prob.data, prob.test.as_ref(), &solver)?
    };
    let last = rec.last();
    let psnr_v = match &prob.truth {
        Some(t) => Some(psnr(&point.tau()?, t)?),
        None => None,
    };
    let summary = Summary {
        algorithm: solver.algorithm.to_string(),
        shape: prob.data.shape().dims().to_vec(),
        rank: point.rank().ranks().to_vec(),
        lambda: solver.lambda,
        delta: solver.delta,
        p: Some(prob.data.sampling_rate()),
        sigma: cfg.sigma,
        final_eps_omega: Some(last.eps_omega).filter(|v| !v.is_nan()),
        final_eps_gamma: last.eps_gamma,
        psnr: psnr_v,
        iters: rec.iterations(),
        seconds: rec.seconds(),
        termination_reason: rec.termination.to_string(),
    };
    Ok(Outcome {
        summary,
        record: Some(rec),
        point: Some(point),
        phase: None,
    })
}

fn run_phase(cfg: &ExperimentConfig) -> Result<Outcome> {
    let r = match cfg.rank {
        RankSpec::Uniform(r) => r,
        RankSpec::PerMode(_) => unreachable!("validated"),
    };
    let solver = cfg.solver(cfg.phase_order)?;
    let spec = PhaseSweepSpec {
        order: cfg.phase_order,
        trials: cfg.phase_trials,
        test_size: cfg.test_size,
        success_tol: cfg.success_tol,
        seed: cfg.seed,
        ..PhaseSweepSpec::new(cfg.phase_extents.clone(), cfg.phase_samples.clone(), r, solver.clone())
    };
    let t0 = Instant::now();
    let counts = phase_sweep(&spec)?;
    let seconds = t0.elapsed().as_secs_f64();
    let path = cfg.out.join("phase.csv");
    fs::write(
        &path,
        format_phase_csv(&cfg.phase_extents, &cfg.phase_samples, &counts),
    )
    .map_err(|e| CliError::io(&path, e))?;
    let summary = Summary {
        algorithm: solver.algorithm.to_string(),
        shape: Vec::new(),
        rank: vec![r; cfg.phase_order],
        lambda: solver.lambda,
        delta: solver.delta,
        p: None,
        sigma: 0.0,
        final_eps_omega: None,
        final_eps_gamma: None,
        psnr: None,
        iters: 0,
        seconds,
        termination_reason: "completed".into(),
    };
    Ok(Outcome {
        summary,
        record: None,
        point: None,
        phase: Some(counts),
    })
}

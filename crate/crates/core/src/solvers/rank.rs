use log::info;

use super::{solve, RunRecord, SolverConfig, StoppingCriteria, Termination};
use crate::datagen::default_init;
use crate::error::{Error, Result};
use crate::metrics::rel_error_on;
use crate::objective::SparseSample;
use crate::ring::{TrPoint, TrRank};
use crate::seed::{SeedStreams, INIT, RANK_GROWTH};

#[derive(Debug, Clone, PartialEq)]
pub struct RankSchedule {
    pub max_rank: TrRank,
    /// Iteration cap of each fixed-rank solve.
    pub phase_iters: usize,
    /// Relative scale of the entries added when a rank grows.
    pub noise: f64,
    /// Validation errors at or below this level count as exact recovery and
    /// end the drive.
    pub resolved_below: f64,
}

impl RankSchedule {
    pub fn new(max_rank: TrRank) -> Self {
        RankSchedule {
            max_rank,
            phase_iters: 50,
            noise: 1e-4,
            resolved_below: 1e-8,
        }
    }
}

/// Greedy rank growth from `(1, ..., 1)`.
///
/// Each phase runs the configured solver for `phase_iters` iterations. Modes
/// are proposed cyclically; a proposal `r_k + 1` is kept only when the
/// validation error strictly decreases. The drive ends when every mode is at
/// its cap, `d` proposals in a row were rejected, or the validation error is
/// already at the `resolved_below` level.
pub fn rank_increase_drive(
    data: &SparseSample,
    validation: &SparseSample,
    test: Option<&SparseSample>,
    cfg: &SolverConfig,
) -> Result<(TrPoint, RunRecord)> {
    let sched = cfg
        .rank_schedule
        .clone()
        .ok_or_else(|| Error::InvalidParameter("rank increase needs a rank schedule".into()))?;
    if validation.is_empty() {
        return Err(Error::EmptySet("validation set"));
    }
    let d = data.shape().order();
    if sched.max_rank.order() != d {
        return Err(Error::ShapeMismatch(format!(
            "max rank of order {} for an order-{d} tensor",
            sched.max_rank.order()
        )));
    }
    let streams = SeedStreams::new(cfg.seed);
    let mut init_rng = streams.stream(INIT);
    let mut grow_rng = streams.stream(RANK_GROWTH);
    let phase_cfg = SolverConfig {
        stopping: StoppingCriteria {
            max_iters: sched.phase_iters,
            ..cfg.stopping
        },
        rank_schedule: None,
        ..cfg.clone()
    };

    let start = default_init(data, &TrRank::uniform(d, 1)?, &mut init_rng)?;
    let (mut best, mut rec) = solve(&start, data, test, &phase_cfg)?;
    let mut best_val = rel_error_on(validation, &best)?;
    let mut rejected = 0;
    let mut mode = 0;
    let termination = loop {
        let at_cap = (0..d).all(|k| best.rank().left(k) >= sched.max_rank.left(k));
        if at_cap {
            break Termination::MaxRank;
        }
        if rejected >= d || best_val <= sched.resolved_below {
            break Termination::NoRankGain;
        }
        let k = mode;
        mode = (mode + 1) % d;
        if best.rank().left(k) >= sched.max_rank.left(k) {
            rejected += 1;
            continue;
        }
        let grown = best.grow_rank(k, sched.noise, &mut grow_rng)?;
        let (cand, cand_rec) = solve(&grown, data, test, &phase_cfg)?;
        let val = rel_error_on(validation, &cand)?;
        if val < best_val {
            info!(
                "rank {:?} accepted, validation error {val:.3e}",
                cand.rank().ranks()
            );
            append(&mut rec, cand_rec);
            best = cand;
            best_val = val;
            rejected = 0;
        } else {
            rejected += 1;
        }
    };
    rec.termination = termination;
    rec.final_rank = Some(best.rank().clone());
    Ok((best, rec))
}

fn append(rec: &mut RunRecord, next: RunRecord) {
    let (it0, t0) = (rec.last().iter, rec.last().time_s);
    rec.iters
        .extend(next.iters.into_iter().skip(1).map(|mut r| {
            r.iter += it0;
            r.time_s += t0;
            r
        }));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::sample_uniform;
    use crate::objective::test_support::random_point;
    use crate::solvers::Algorithm;
    use crate::tensor::Shape;

    #[test]
    fn rank_one_target_is_never_grown() {
        let shape = Shape::new(vec![6, 6, 6]).unwrap();
        let (truth, t) =
            crate::datagen::gen_tr_random(&shape, &TrRank::uniform(3, 1).unwrap(), 1).unwrap();
        let train = sample_uniform(truth.shape(), 150, 2).unwrap();
        let rest: Vec<usize> = (0..216).filter(|&o| !train.contains(o)).collect();
        let val = crate::objective::IndexSet::from_offsets(shape.clone(), rest).unwrap();
        let cfg = SolverConfig {
            algorithm: Algorithm::Rgd,
            rank_schedule: Some(RankSchedule::new(TrRank::uniform(3, 3).unwrap())),
            ..Default::default()
        };
        let (p, rec) = rank_increase_drive(
            &train.observe(&t).unwrap(),
            &val.observe(&t).unwrap(),
            None,
            &cfg,
        )
        .unwrap();
        assert_eq!(p.rank().ranks(), &[1, 1, 1]);
        assert_eq!(rec.termination, Termination::NoRankGain);
    }

    #[test]
    fn unit_cap_is_single_run() {
        let truth = random_point(&[5, 5, 5], &[2, 2, 2], 3);
        let t = truth.tau().unwrap();
        let train = sample_uniform(truth.shape(), 60, 4).unwrap();
        let val = train.observe(&t).unwrap();
        let cfg = SolverConfig {
            rank_schedule: Some(RankSchedule::new(TrRank::uniform(3, 1).unwrap())),
            ..Default::default()
        };
        let (p, rec) = rank_increase_drive(&val, &val, None, &cfg).unwrap();
        assert_eq!(p.rank().ranks(), &[1, 1, 1]);
        assert_eq!(rec.termination, Termination::MaxRank);
        assert!(rank_increase_drive(&val, &val, None, &SolverConfig::default()).is_err());
    }
}

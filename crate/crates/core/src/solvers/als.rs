use log::warn;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{check_problem, Algorithm, IterRecord, RunRecord, SolverConfig, Tracker};
use crate::error::Result;
use crate::objective::{residual, ObjectiveConfig, SparseSample, SubchainWorkspace};
use crate::ring::{SliceTable, TrPoint};

/// Added to a per-row system that is not numerically positive definite.
const RIDGE_FLOOR: f64 = 1e-12;

/// Sample ids grouped by their mode-`k` index.
fn rows_of(data: &SparseSample, k: usize, n: usize) -> Vec<Vec<usize>> {
    let mut rows = vec![Vec::new(); n];
    for s in 0..data.len() {
        rows[data.index0(s)[k]].push(s);
    }
    rows
}

/// Replaces `W_k` by the exact minimizer of `f` in that block. Each row solves
/// `(sum w w^T + p lambda I) x = sum a w` over its samples. Returns the new
/// point and the number of rows that needed the ridge floor.
pub fn als_mode_update(
    p: &TrPoint,
    data: &SparseSample,
    k: usize,
    lambda: f64,
) -> Result<(TrPoint, usize)> {
    data.check_point(p)?;
    p.shape().check_mode(k)?;
    let obj = ObjectiveConfig::for_sample(data, lambda)?;
    let n = p.shape().dim(k);
    let groups = rows_of(data, k, n);
    Ok(update_with_groups(p, data, k, &groups, obj.p * lambda))
}

fn update_with_groups(
    p: &TrPoint,
    data: &SparseSample,
    k: usize,
    groups: &[Vec<usize>],
    ridge: f64,
) -> (TrPoint, usize) {
    let table = SliceTable::new(p);
    let c = p.rank().cols(k);
    let solved: Vec<(Vec<f64>, bool)> = groups
        .par_iter()
        .map(|ids| {
            let mut ws = SubchainWorkspace::new(&table);
            let mut g = DMatrix::<f64>::zeros(c, c);
            let mut rhs = DVector::<f64>::zeros(c);
            for &s in ids {
                let w = table.subchain_row(k, data.index0(s), &mut ws);
                let a = data.values()[s];
                for j in 0..c {
                    rhs[j] += a * w[j];
                    for i in j..c {
                        g[(i, j)] += w[i] * w[j];
                    }
                }
            }
            for j in 0..c {
                g[(j, j)] += ridge;
                for i in j + 1..c {
                    g[(j, i)] = g[(i, j)];
                }
            }
            match g.clone().cholesky() {
                Some(ch) if ridge > 0.0 || well_conditioned(&ch) => {
                    (ch.solve(&rhs).as_slice().to_vec(), false)
                }
                _ => {
                    for j in 0..c {
                        g[(j, j)] += RIDGE_FLOOR;
                    }
                    let x = match g.clone().cholesky() {
                        Some(ch) => ch.solve(&rhs),
                        None => g
                            .svd(true, true)
                            .solve(&rhs, 1e-14)
                            .unwrap_or_else(|_| DVector::zeros(c)),
                    };
                    (x.as_slice().to_vec(), true)
                }
            }
        })
        .collect();
    let mut floored = 0;
    let mut w = p.factor(k).clone();
    for (i, (x, f)) in solved.into_iter().enumerate() {
        floored += f as usize;
        for j in 0..c {
            w[(i, j)] = x[j];
        }
    }
    let mut factors = p.factors().to_vec();
    factors[k] = w;
    let next =
        TrPoint::new(p.shape().clone(), p.rank().clone(), factors).unwrap_or_else(|_| p.clone());
    (next, floored)
}

fn well_conditioned(ch: &nalgebra::Cholesky<f64, nalgebra::Dyn>) -> bool {
    let d = ch.l_dirty().diagonal();
    let (lo, hi) = d.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| {
        (lo.min(v.abs()), hi.max(v.abs()))
    });
    hi > 0.0 && lo > 1e-10 * hi
}

/// Alternating least squares over the modes in fixed order `1..d`.
pub fn tr_als(
    init: &TrPoint,
    data: &SparseSample,
    test: Option<&SparseSample>,
    cfg: &SolverConfig,
) -> Result<(TrPoint, RunRecord)> {
    check_problem(init, data, cfg)?;
    let obj = ObjectiveConfig::for_sample(data, cfg.lambda)?;
    let d = init.order();
    let groups: Vec<Vec<Vec<usize>>> = (0..d)
        .map(|k| rows_of(data, k, init.shape().dim(k)))
        .collect();
    let mut tr = Tracker::new(data, test, cfg.stopping);
    let mut cur = init.clone();
    let record = |p: &TrPoint, t: usize, tr: &Tracker| -> Result<IterRecord> {
        let r = residual(p, data)?;
        let rn = r.norm_sq();
        Ok(IterRecord {
            iter: t,
            time_s: tr.elapsed(),
            f: rn / (2.0 * obj.p) + 0.5 * obj.lambda * p.norm_sq(),
            eps_omega: tr.eps_omega(rn.sqrt()),
            eps_gamma: tr.eps_gamma(p)?,
            grad_norm: None,
            step: None,
            beta: None,
            w_norm_sq: p.norm_sq(),
            descent: None,
            prev_grad_metric_sq: None,
        })
    };
    let first = record(&cur, 0, &tr)?;
    let mut termination = tr.check(first.eps_omega, None);
    let mut log = vec![first];
    let mut t = 0;
    let mut floored_total = 0;
    while termination.is_none() {
        t += 1;
        if let Some(stop) = tr.budget(t) {
            termination = Some(stop);
            break;
        }
        for (k, g) in groups.iter().enumerate() {
            let (next, floored) = update_with_groups(&cur, data, k, g, obj.p * cfg.lambda);
            floored_total += floored;
            cur = next;
        }
        let rec = record(&cur, t, &tr)?;
        termination = tr.check(rec.eps_omega, None);
        log.push(rec);
    }
    if floored_total > 0 {
        warn!("{floored_total} row systems were regularized by {RIDGE_FLOOR:e}");
    }
    Ok((
        cur,
        RunRecord {
            algorithm: Algorithm::Als,
            iters: log,
            termination: termination.unwrap_or(super::Termination::MaxIters),
            lambda: cfg.lambda,
            line_search: cfg.line_search,
            final_rank: None,
        },
    ))
}

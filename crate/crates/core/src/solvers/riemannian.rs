use log::debug;

use super::{check_problem, IterRecord, RunRecord, SolverConfig, StepRule, Termination, Tracker};
use crate::error::Result;
use crate::linesearch::{armijo_step, exact_step, rbb_step, Armijo, RbbMemory};
use crate::metric::MetricState;
use crate::objective::{cost, cost_and_grad, ObjectiveConfig, SparseSample};
use crate::ring::{TangentVector, TrPoint};
use crate::solvers::Algorithm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Direction {
    Steepest,
    /// HS+ conjugate directions; `zero_beta` pins `beta = 0`.
    HsPlus {
        zero_beta: bool,
    },
}

/// TR-RGD: `W <- W - s grad f(W)`.
pub fn tr_rgd(
    init: &TrPoint,
    data: &SparseSample,
    test: Option<&SparseSample>,
    cfg: &SolverConfig,
) -> Result<(TrPoint, RunRecord)> {
    descend(init, data, test, cfg, Direction::Steepest, Algorithm::Rgd)
}

/// TR-RCG with the HS+ rule and a restart whenever the previous direction is
/// not a descent direction at the new point.
pub fn tr_rcg(
    init: &TrPoint,
    data: &SparseSample,
    test: Option<&SparseSample>,
    cfg: &SolverConfig,
) -> Result<(TrPoint, RunRecord)> {
    let mut c = cfg.clone();
    // conjugate directions are paired with backtracking
    c.step_rule = StepRule::ArmijoRbb;
    descend(
        init,
        data,
        test,
        &c,
        Direction::HsPlus { zero_beta: false },
        Algorithm::Rcg,
    )
}

struct State {
    point: TrPoint,
    f: f64,
    residual_norm: f64,
    metric: MetricState,
    rgrad: TangentVector,
}

fn evaluate(p: TrPoint, data: &SparseSample, obj: &ObjectiveConfig, delta: f64) -> Result<State> {
    let cg = cost_and_grad(&p, data, obj)?;
    let metric = MetricState::new(&p, delta)?;
    let rgrad = metric.riemannian_grad(&cg.grad)?;
    Ok(State {
        f: cg.cost,
        residual_norm: cg.residual.norm_sq().sqrt(),
        point: p,
        metric,
        rgrad,
    })
}

pub(crate) fn descend(
    init: &TrPoint,
    data: &SparseSample,
    test: Option<&SparseSample>,
    cfg: &SolverConfig,
    dir: Direction,
    algorithm: Algorithm,
) -> Result<(TrPoint, RunRecord)> {
    check_problem(init, data, cfg)?;
    let obj = ObjectiveConfig::for_sample(data, cfg.lambda)?;
    let mut tr = Tracker::new(data, test, cfg.stopping);
    let mut cur = evaluate(init.clone(), data, &obj, cfg.delta)?;
    let mut log = Vec::new();
    let eps0 = tr.eps_omega(cur.residual_norm);
    let gn0 = cur.rgrad.frob_norm();
    log.push(IterRecord {
        iter: 0,
        time_s: tr.elapsed(),
        f: cur.f,
        eps_omega: eps0,
        eps_gamma: tr.eps_gamma(&cur.point)?,
        grad_norm: Some(gn0),
        step: None,
        beta: None,
        w_norm_sq: cur.point.norm_sq(),
        descent: None,
        prev_grad_metric_sq: None,
    });
    let mut termination = tr.check(eps0, Some(gn0));

    let mut mem: Option<RbbMemory> = None;
    let mut prev_dir: Option<TangentVector> = None;
    let mut last_step = 1.0;
    let mut t = 0;
    while termination.is_none() {
        t += 1;
        if let Some(stop) = tr.budget(t) {
            termination = Some(stop);
            break;
        }
        let st = &cur.metric;
        let mut beta = None;
        let eta = match (dir, &prev_dir, &mem) {
            (Direction::HsPlus { zero_beta }, Some(eta_prev), Some(m)) => {
                let restart = st.inner(eta_prev, &cur.rgrad)? >= 0.0;
                let b = if restart || zero_beta {
                    0.0
                } else {
                    let y = cur.rgrad.sub(&m.prev_grad)?;
                    let den = st.inner(&y, eta_prev)?;
                    if den == 0.0 {
                        0.0
                    } else {
                        (st.inner(&y, &cur.rgrad)? / den).max(0.0)
                    }
                };
                beta = Some(b);
                if b == 0.0 {
                    cur.rgrad.neg()
                } else {
                    cur.rgrad.neg().add_scaled(b, eta_prev)?
                }
            }
            (Direction::HsPlus { .. }, _, _) => {
                beta = Some(0.0);
                cur.rgrad.neg()
            }
            (Direction::Steepest, _, _) => cur.rgrad.neg(),
        };
        let g0 = st.inner(&cur.rgrad, &eta)?;
        let grad_w_sq = st.norm_sq(&cur.rgrad)?;
        if !(g0 < 0.0) {
            termination = Some(Termination::Stalled);
            break;
        }

        let f_at = |s: f64| cost(&cur.point.axpy(s, &eta)?, data, &obj);
        let mut step = None;
        let use_exact = cfg.step_rule == StepRule::Exact || (t == 1 && cfg.exact_first_step);
        let mut s0 = cfg.rbb_bounds.fallback;
        if use_exact {
            let ex = exact_step(&cur.point, &eta, data, &obj, 2.0 * last_step)?;
            if !ex.needs_fallback && ex.step.is_finite() {
                if cfg.step_rule == StepRule::Exact {
                    step = Some(ex.step);
                } else {
                    s0 = ex.step;
                }
            }
        } else if let Some(m) = &mem {
            s0 = rbb_step(st, m, &cur.point, &cur.rgrad, cfg.rbb, &cfg.rbb_bounds)?.step;
        }
        let step = match step {
            Some(s) => s,
            None => match armijo_step(f_at, cur.f, g0, s0, &cfg.line_search)? {
                Armijo::Accepted { step, .. } => step,
                Armijo::Failed { last_step } => {
                    debug!("line search reached s = {last_step:e} at iteration {t}");
                    termination = Some(Termination::Stalled);
                    break;
                }
            },
        };

        let next = evaluate(cur.point.axpy(step, &eta)?, data, &obj, cfg.delta)?;
        let prev = std::mem::replace(&mut cur, next);
        mem = Some(RbbMemory {
            prev_point: prev.point,
            prev_grad: prev.rgrad,
        });
        prev_dir = Some(eta);
        last_step = step;

        let eps = tr.eps_omega(cur.residual_norm);
        let gn = cur.rgrad.frob_norm();
        log.push(IterRecord {
            iter: t,
            time_s: tr.elapsed(),
            f: cur.f,
            eps_omega: eps,
            eps_gamma: tr.eps_gamma(&cur.point)?,
            grad_norm: Some(gn),
            step: Some(step),
            beta,
            w_norm_sq: cur.point.norm_sq(),
            descent: Some(g0),
            prev_grad_metric_sq: Some(grad_w_sq),
        });
        termination = tr.check(eps, Some(gn));
    }
    let _ = tr.data();
    Ok((
        cur.point,
        RunRecord {
            algorithm,
            iters: log,
            termination: termination.unwrap_or(Termination::MaxIters),
            lambda: cfg.lambda,
            line_search: cfg.line_search,
            final_rank: None,
        },
    ))
}

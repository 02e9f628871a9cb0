use super::{Algorithm, RunRecord};

/// A failed convergence check, naming the iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    CostIncrease {
        iter: usize,
        before: f64,
        after: f64,
    },
    NormBound {
        iter: usize,
        norm_sq: f64,
        bound: f64,
    },
    NotDescent {
        iter: usize,
        descent: f64,
        bound: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InvariantReport {
    pub violations: Vec<Violation>,
    pub checked_norm_bound: bool,
    pub checked_descent: bool,
}

impl InvariantReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a fixed-rank run log:
/// (a) `f` never increases,
/// (b) `||W_t||^2 <= 2 f(W_0) / lambda + 1e-9` when `lambda > 0`,
/// (c) for RCG, `g(eta, grad f) <= -||grad f||_W^2 + 1e-10`.
pub fn check_convergence_invariants(rec: &RunRecord) -> InvariantReport {
    let mut rep = InvariantReport::default();
    for w in rec.iters.windows(2) {
        if w[1].f > w[0].f {
            rep.violations.push(Violation::CostIncrease {
                iter: w[1].iter,
                before: w[0].f,
                after: w[1].f,
            });
        }
    }
    if rec.lambda > 0.0 {
        rep.checked_norm_bound = true;
        let bound = 2.0 * rec.f0() / rec.lambda + 1e-9;
        for r in &rec.iters {
            if r.w_norm_sq > bound {
                rep.violations.push(Violation::NormBound {
                    iter: r.iter,
                    norm_sq: r.w_norm_sq,
                    bound,
                });
            }
        }
    }
    if rec.algorithm == Algorithm::Rcg {
        rep.checked_descent = true;
        for r in &rec.iters {
            if let (Some(g), Some(n)) = (r.descent, r.prev_grad_metric_sq) {
                let bound = -n + 1e-10;
                if g > bound {
                    rep.violations.push(Violation::NotDescent {
                        iter: r.iter,
                        descent: g,
                        bound,
                    });
                }
            }
        }
    }
    rep
}

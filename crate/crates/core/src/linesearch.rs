//! Stepsize rules: exact line search on the degree-`2d` polynomial
//! `h(s) = f(W + s eta)`, Armijo backtracking, and Riemannian
//! Barzilai-Borwein initial steps.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::metric::MetricState;
use crate::objective::{cost, ObjectiveConfig, SparseSample};
use crate::ring::{TangentVector, TrPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchParams {
    pub rho: f64,
    pub a: f64,
    pub s_min: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearchParams {
    fn default() -> Self {
        LineSearchParams {
            rho: 0.4,
            a: 1e-5,
            s_min: 1e-10,
            max_backtracks: 100,
        }
    }
}

impl LineSearchParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "rho must be in (0, 1), got {}",
                self.rho
            )));
        }
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "a must be in (0, 1), got {}",
                self.a
            )));
        }
        if !(self.s_min > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "s_min must be > 0, got {}",
                self.s_min
            )));
        }
        Ok(())
    }
}

/// Result of a backtracking search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Armijo {
    Accepted {
        step: f64,
        f: f64,
        backtracks: usize,
    },
    /// The floor `s_min` or the backtrack cap was reached.
    Failed { last_step: f64 },
}

/// Returns `s = rho^l s0` for the smallest `l >= 0` with
/// `f0 - f(s) >= -s a g0` and `s > s_min`.
pub fn armijo_step<F>(
    mut f_at: F,
    f0: f64,
    g0: f64,
    s0: f64,
    prm: &LineSearchParams,
) -> Result<Armijo>
where
    F: FnMut(f64) -> Result<f64>,
{
    prm.validate()?;
    if !(g0 < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "not a descent direction: g0 = {g0}"
        )));
    }
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "initial step must be > 0, got {s0}"
        )));
    }
    let mut s = s0;
    for l in 0..=prm.max_backtracks {
        if s <= prm.s_min {
            return Ok(Armijo::Failed { last_step: s });
        }
        let f = f_at(s)?;
        if f0 - f >= -s * prm.a * g0 {
            return Ok(Armijo::Accepted {
                step: s,
                f,
                backtracks: l,
            });
        }
        s *= prm.rho;
    }
    Ok(Armijo::Failed { last_step: s })
}

/// `h(s)` in monomial form in the window variable `x = 2 s / s_max - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinePolynomial {
    s_max: f64,
    coeffs: Vec<f64>,
}

impl LinePolynomial {
    /// Interpolates `h` (of known `degree`) at Chebyshev nodes on `[0, s_max]`.
    pub fn fit<F>(mut h: F, degree: usize, s_max: f64) -> Result<Self>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        if !(s_max > 0.0 && s_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "window must be > 0, got {s_max}"
            )));
        }
        let m = degree + 1;
        let nodes: Vec<f64> = (0..m)
            .map(|j| -(std::f64::consts::PI * (j as f64 + 0.5) / m as f64).cos())
            .collect();
        let values = nodes
            .iter()
            .map(|&x| h(0.5 * s_max * (x + 1.0)))
            .collect::<Result<Vec<_>>>()?;
        // Chebyshev basis at Chebyshev nodes is well conditioned
        let t = DMatrix::from_fn(m, m, |i, j| chebyshev(j, nodes[i]));
        let rhs = nalgebra::DVector::from_vec(values);
        let c = t
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidParameter("singular interpolation system".into()))?;
        // T_j in monomials via T_{j+1} = 2x T_j - T_{j-1}
        let mut coeffs = vec![0.0; m];
        let mut prev = vec![0.0; m];
        let mut cur = vec![0.0; m];
        prev[0] = 1.0;
        if m > 1 {
            cur[1] = 1.0;
        }
        for j in 0..m {
            let basis = if j == 0 { &prev } else { &cur };
            for (o, b) in coeffs.iter_mut().zip(basis) {
                *o += c[j] * b;
            }
            if j >= 1 && j + 1 < m {
                let mut next = vec![0.0; m];
                for q in 0..m - 1 {
                    next[q + 1] += 2.0 * cur[q];
                }
                for q in 0..m {
                    next[q] -= prev[q];
                }
                prev = std::mem::replace(&mut cur, next);
            }
        }
        Ok(LinePolynomial { s_max, coeffs })
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    fn to_x(&self, s: f64) -> f64 {
        2.0 * s / self.s_max - 1.0
    }

    pub fn eval(&self, s: f64) -> f64 {
        horner(&self.coeffs, self.to_x(s))
    }

    /// Real stationary points `s > 0` of the fitted polynomial.
    pub fn positive_stationary_points(&self) -> Vec<f64> {
        let dc: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, &c)| j as f64 * c)
            .collect();
        let scale = dc.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if scale == 0.0 {
            return Vec::new();
        }
        let mut top = dc.len();
        while top > 0 && dc[top - 1].abs() <= 1e-14 * scale {
            top -= 1;
        }
        let dc = &dc[..top];
        if dc.len() < 2 {
            return Vec::new();
        }
        let n = dc.len() - 1;
        let lead = dc[n];
        let mut comp = DMatrix::zeros(n, n);
        for i in 1..n {
            comp[(i, i - 1)] = 1.0;
        }
        for i in 0..n {
            comp[(i, n - 1)] = -dc[i] / lead;
        }
        let ddc: Vec<f64> = dc
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, &c)| j as f64 * c)
            .collect();
        let mut out = Vec::new();
        for z in comp.complex_eigenvalues().iter() {
            if z.im.abs() > 1e-6 * (1.0 + z.re.abs()) {
                continue;
            }
            let mut x = z.re;
            for _ in 0..8 {
                let d2 = horner(&ddc, x);
                if d2 == 0.0 {
                    break;
                }
                let dx = horner(dc, x) / d2;
                x -= dx;
                if dx.abs() <= 1e-16 * (1.0 + x.abs()) {
                    break;
                }
            }
            let s = 0.5 * self.s_max * (x + 1.0);
            if s > 0.0 && s.is_finite() {
                out.push(s);
            }
        }
        out
    }
}

fn chebyshev(j: usize, x: f64) -> f64 {
    let (mut a, mut b) = (1.0, x);
    match j {
        0 => a,
        _ => {
            for _ in 1..j {
                let c = 2.0 * x * b - a;
                a = b;
                b = c;
            }
            b
        }
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &v| acc * x + v)
}

/// Outcome of [`exact_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactStep {
    pub step: f64,
    pub f: f64,
    /// No candidate decreased `h`; the caller should backtrack instead.
    pub needs_fallback: bool,
}

/// Degree-`2d` fit of `h(s) = f(p + s eta)` on `[0, s_max]`.
pub fn fit_line_polynomial(
    p: &TrPoint,
    eta: &TangentVector,
    data: &SparseSample,
    cfg: &ObjectiveConfig,
    s_max: f64,
) -> Result<LinePolynomial> {
    let h = |s: f64| cost(&p.axpy(s, eta)?, data, cfg);
    LinePolynomial::fit(h, 2 * p.order(), s_max)
}

/// Minimizes `h(s) = f(p + s eta)` over `s > 0` via the roots of `h'`.
/// Candidates are re-evaluated with the true cost; the window end `s_max` is
/// always a candidate.
pub fn exact_step(
    p: &TrPoint,
    eta: &TangentVector,
    data: &SparseSample,
    cfg: &ObjectiveConfig,
    s_max: f64,
) -> Result<ExactStep> {
    if eta.frob_norm() == 0.0 {
        return Err(Error::InvalidParameter("zero search direction".into()));
    }
    let poly = fit_line_polynomial(p, eta, data, cfg, s_max)?;
    let f0 = cost(p, data, cfg)?;
    let mut cands = poly.positive_stationary_points();
    cands.push(s_max);
    let mut best = (f64::NAN, f64::INFINITY);
    for s in cands {
        let f = cost(&p.axpy(s, eta)?, data, cfg)?;
        if f < best.1 {
            best = (s, f);
        }
    }
    Ok(ExactStep {
        step: best.0,
        f: best.1,
        needs_fallback: !(best.1 < f0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RbbVariant {
    Rbb1,
    #[default]
    Rbb2,
}

impl std::str::FromStr for RbbVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbb1" => Ok(RbbVariant::Rbb1),
            "rbb2" => Ok(RbbVariant::Rbb2),
            other => Err(Error::InvalidParameter(format!(
                "unknown RBB variant '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbbBounds {
    pub floor: f64,
    pub ceil: f64,
    pub fallback: f64,
}

impl Default for RbbBounds {
    fn default() -> Self {
        RbbBounds {
            floor: 1e-10,
            ceil: 1e10,
            fallback: 1.0,
        }
    }
}

/// The previous iterate and its Riemannian gradient.
#[derive(Debug, Clone)]
pub struct RbbMemory {
    pub prev_point: TrPoint,
    pub prev_grad: TangentVector,
}

/// Returned stepsize and whether the fallback was used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbbStep {
    pub step: f64,
    pub fallback: bool,
}

/// `RBB1 = ||Z||^2 / |g(Z, Y)|`, `RBB2 = |g(Z, Y)| / ||Y||^2` with
/// `Z = W_t - W_{t-1}`, `Y = grad_t - grad_{t-1}`, all in the metric at `W_t`.
pub fn rbb_step(
    st_new: &MetricState,
    mem: &RbbMemory,
    current: &TrPoint,
    current_grad: &TangentVector,
    variant: RbbVariant,
    bounds: &RbbBounds,
) -> Result<RbbStep> {
    if st_new.version() != current.version() {
        return Err(Error::StaleMetric {
            expected: st_new.version(),
            found: Some(current.version()),
        });
    }
    let z = current.diff(&mem.prev_point)?;
    let y = current_grad.sub(&mem.prev_grad)?;
    let zy = st_new.inner(&z, &y)?.abs();
    let (num, den) = match variant {
        RbbVariant::Rbb1 => (st_new.norm_sq(&z)?, zy),
        RbbVariant::Rbb2 => (zy, st_new.norm_sq(&y)?),
    };
    if !(den > 0.0) || !num.is_finite() {
        return Ok(RbbStep {
            step: bounds.fallback,
            fallback: true,
        });
    }
    Ok(RbbStep {
        step: (num / den).clamp(bounds.floor, bounds.ceil),
        fallback: false,
    })
}

//! The preconditioned metric `g_W(xi, eta) = sum_k tr(xi_k H_k eta_k^T)` with
//! `H_k = W_{!=k}^T W_{!=k} + delta I`.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::objective::{SparseSample, SubchainWorkspace};
use crate::ring::{SliceTable, TangentVector, TrPoint};
use crate::small;

pub const DEFAULT_DELTA: f64 = 1e-8;

const PAR_WORK: usize = 1 << 20;

/// `W_{!=k}^T W_{!=k}` without forming `W_{!=k}`.
///
/// The matrix is kept as `r_k^2` blocks `B_{aa'}`, one per pair of column
/// indices of the trailing factor. Walking the ring backwards from `U_{k-1}`
/// to `U_{k+1}`, each block is updated as `B <- sum_i U_j(i) B U_j(i)^T`,
/// which is the Kronecker-structured update applied one block at a time.
pub fn gram_subchain(p: &TrPoint, k: usize) -> Result<DMatrix<f64>> {
    p.shape().check_mode(k)?;
    let table = SliceTable::new(p);
    Ok(gram_from_table(&table, p.shape().dims(), k))
}

fn gram_from_table(table: &SliceTable, dims: &[usize], k: usize) -> DMatrix<f64> {
    let d = table.order();
    let rk = table.left(k);
    let pairs: Vec<(usize, usize)> = (0..rk).flat_map(|a| (a..rk).map(move |b| (a, b))).collect();

    let block = |&(al, alp): &(usize, usize)| {
        let j = (k + d - 1) % d;
        let a = table.left(j);
        let mut blk = vec![0.0; a * a];
        for i in 0..dims[j] {
            let s = table.slice(j, i);
            let (x, y) = (&s[al * a..(al + 1) * a], &s[alp * a..(alp + 1) * a]);
            for cp in 0..a {
                let ycp = y[cp];
                for c in 0..a {
                    blk[c + a * cp] += x[c] * ycp;
                }
            }
        }
        let rmax = (0..d).map(|l| table.left(l)).max().unwrap_or(1);
        let mut t = vec![0.0; rmax * rmax];
        for step in 2..d {
            let j = (k + d - step) % d;
            let (m, n) = (table.left(j), table.right(j));
            let mut next = vec![0.0; m * m];
            for i in 0..dims[j] {
                let u = table.slice(j, i);
                small::matmul(u, &blk, m, n, n, &mut t);
                // next += t u^T
                for cp in 0..m {
                    for e in 0..n {
                        let uce = u[cp + m * e];
                        if uce == 0.0 {
                            continue;
                        }
                        let tcol = &t[e * m..(e + 1) * m];
                        let ncol = &mut next[cp * m..(cp + 1) * m];
                        for (o, &v) in ncol.iter_mut().zip(tcol) {
                            *o += v * uce;
                        }
                    }
                }
            }
            blk = next;
        }
        blk
    };
    let rmax = (0..d).map(|l| table.left(l)).max().unwrap_or(1);
    let work = pairs.len() * dims.iter().sum::<usize>() * rmax.pow(3);
    let blocks: Vec<Vec<f64>> = if work < PAR_WORK {
        pairs.iter().map(block).collect()
    } else {
        pairs.par_iter().map(block).collect()
    };

    let rr = table.right(k);
    let c = rk * rr;
    let mut g = DMatrix::zeros(c, c);
    for (&(al, alp), blk) in pairs.iter().zip(&blocks) {
        for b in 0..rr {
            for bp in 0..rr {
                let v = blk[b + rr * bp];
                g[(al + rk * b, alp + rk * bp)] = v;
                g[(alp + rk * bp, al + rk * b)] = v;
            }
        }
    }
    let gt = g.transpose();
    (g + gt) * 0.5
}

/// Grams and Cholesky factors of `H_k` at one point.
#[derive(Debug, Clone)]
pub struct MetricState {
    version: u64,
    delta: f64,
    rows: Vec<usize>,
    grams: Vec<DMatrix<f64>>,
    chol: Vec<Cholesky<f64, Dyn>>,
}

impl MetricState {
    pub fn new(p: &TrPoint, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta must be > 0, got {delta}"
            )));
        }
        let table = SliceTable::new(p);
        let dims = p.shape().dims();
        let grams: Vec<DMatrix<f64>> = (0..p.order())
            .into_par_iter()
            .map(|k| gram_from_table(&table, dims, k))
            .collect();
        let chol = grams
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let n = g.nrows();
                Cholesky::new(g + DMatrix::<f64>::identity(n, n) * delta)
                    .ok_or(Error::Cholesky { mode: k })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricState {
            version: p.version(),
            delta,
            rows: dims.to_vec(),
            grams,
            chol,
        })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn grams(&self) -> &[DMatrix<f64>] {
        &self.grams
    }

    pub fn gram(&self, k: usize) -> &DMatrix<f64> {
        &self.grams[k]
    }

    /// `H_k = gram_k + delta I`.
    pub fn h(&self, k: usize) -> DMatrix<f64> {
        let n = self.grams[k].nrows();
        &self.grams[k] + DMatrix::<f64>::identity(n, n) * self.delta
    }

    pub fn cholesky(&self, k: usize) -> &Cholesky<f64, Dyn> {
        &self.chol[k]
    }

    fn check(&self, v: &TangentVector) -> Result<()> {
        if v.len() != self.grams.len()
            || v.comps()
                .iter()
                .enumerate()
                .any(|(k, c)| c.nrows() != self.rows[k] || c.ncols() != self.grams[k].nrows())
        {
            return Err(Error::ShapeMismatch(
                "tangent vector does not match the metric's point".into(),
            ));
        }
        Ok(())
    }

    /// `g_W(xi, eta)`.
    pub fn inner(&self, xi: &TangentVector, eta: &TangentVector) -> Result<f64> {
        self.check(xi)?;
        self.check(eta)?;
        Ok((0..self.grams.len())
            .map(|k| {
                let xh = xi.comp(k) * &self.grams[k];
                xh.dot(eta.comp(k)) + self.delta * xi.comp(k).dot(eta.comp(k))
            })
            .sum())
    }

    pub fn norm_sq(&self, xi: &TangentVector) -> Result<f64> {
        self.inner(xi, xi)
    }

    /// Solves `eta_k H_k = G_k` for every mode. The gradient must carry this
    /// state's point version.
    pub fn riemannian_grad(&self, g: &TangentVector) -> Result<TangentVector> {
        if g.anchor() != Some(self.version) {
            return Err(Error::StaleMetric {
                expected: self.version,
                found: g.anchor(),
            });
        }
        self.check(g)?;
        let comps = g
            .comps()
            .iter()
            .zip(&self.chol)
            .map(|(gk, ch)| ch.solve(&gk.transpose()).transpose())
            .collect();
        Ok(TangentVector::new(comps).with_anchor(self.version))
    }

    /// `(xi_k H_k)_k`.
    pub fn apply(&self, xi: &TangentVector) -> Result<TangentVector> {
        self.check(xi)?;
        Ok(TangentVector::new(
            (0..self.grams.len())
                .map(|k| xi.comp(k) * &self.grams[k] + xi.comp(k) * self.delta)
                .collect(),
        ))
    }
}

pub fn metric_state(p: &TrPoint, delta: f64) -> Result<MetricState> {
    MetricState::new(p, delta)
}

pub fn metric_inner(st: &MetricState, xi: &TangentVector, eta: &TangentVector) -> Result<f64> {
    st.inner(xi, eta)
}

pub fn riemannian_grad(st: &MetricState, g: &TangentVector) -> Result<TangentVector> {
    st.riemannian_grad(g)
}

/// Diagonal Hessian blocks of the data term applied to `xi`:
/// `(1/p) P_Omega(xi_k W_{!=k}^T)_(k) W_{!=k}` for each mode.
pub fn hessian_diag_apply(
    p: &TrPoint,
    data: &SparseSample,
    xi: &TangentVector,
) -> Result<TangentVector> {
    data.check_point(p)?;
    p.check_tangent(xi)?;
    let d = p.order();
    let table = SliceTable::new(p);
    let inv_p = 1.0 / data.sampling_rate();
    let mut out: Vec<DMatrix<f64>> = xi
        .comps()
        .iter()
        .map(|x| DMatrix::zeros(x.nrows(), x.ncols()))
        .collect();
    let mut ws = SubchainWorkspace::new(&table);
    for s in 0..data.len() {
        let idx = data.index0(s);
        table.prefixes(idx, &mut ws);
        table.for_each_subchain_row(idx, &mut ws, |k, row| {
            let x = xi.comp(k);
            let t: f64 = row
                .iter()
                .enumerate()
                .map(|(c, &w)| x[(idx[k], c)] * w)
                .sum();
            let o = &mut out[k];
            for (c, &w) in row.iter().enumerate() {
                o[(idx[k], c)] += inv_p * t * w;
            }
        });
    }
    debug_assert_eq!(out.len(), d);
    Ok(TangentVector::new(out))
}

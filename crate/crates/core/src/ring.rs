//! Points of the TR search space and tangent vectors.
//!
//! A [`TrPoint`] stores `W_k = (U_k)_(2)`, the mode-2 unfolding of each core.
//! Row `i` of `W_k` is `vec(U_k(i))^T`, the column vectorization of the lateral
//! slice `U_k(i)`, an `r_k x r_{k+1}` matrix. Ranks are cyclic: `r_{d+1} = r_1`.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::small;
use crate::tensor::{Core3, DenseTensor, MultiIndex, Shape, DENSE_LIMIT};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// TR rank `(r_1, ..., r_d)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TrRank {
    ranks: Vec<usize>,
}

impl TrRank {
    pub fn new(ranks: impl Into<Vec<usize>>) -> Result<Self> {
        let ranks = ranks.into();
        if ranks.is_empty() || ranks.contains(&0) {
            return Err(Error::InvalidParameter(format!(
                "TR ranks must be positive, got {ranks:?}"
            )));
        }
        Ok(TrRank { ranks })
    }

    pub fn uniform(order: usize, r: usize) -> Result<Self> {
        TrRank::new(vec![r; order])
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn order(&self) -> usize {
        self.ranks.len()
    }

    /// `r_k`, the left bond of core `k`.
    pub fn left(&self, k: usize) -> usize {
        self.ranks[k]
    }

    /// `r_{k+1}`, the right bond of core `k`, cyclically.
    pub fn right(&self, k: usize) -> usize {
        self.ranks[(k + 1) % self.ranks.len()]
    }

    /// Column count `r_k r_{k+1}` of `W_k`.
    pub fn cols(&self, k: usize) -> usize {
        self.left(k) * self.right(k)
    }
}

/// `W = (W_1, ..., W_d)`.
///
/// Points are immutable. Each construction draws a fresh version stamp that
/// metric states use to refuse being applied at a different point.
#[derive(Debug, Clone)]
pub struct TrPoint {
    shape: Shape,
    rank: TrRank,
    factors: Vec<DMatrix<f64>>,
    version: u64,
}

impl PartialEq for TrPoint {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.rank == other.rank && self.factors == other.factors
    }
}

impl TrPoint {
    pub fn new(shape: Shape, rank: TrRank, factors: Vec<DMatrix<f64>>) -> Result<Self> {
        if rank.order() != shape.order() {
            return Err(Error::ShapeMismatch(format!(
                "rank of order {} for a shape of order {}",
                rank.order(),
                shape.order()
            )));
        }
        if factors.len() != shape.order() {
            return Err(Error::ShapeMismatch(format!(
                "{} factors for an order-{} tensor",
                factors.len(),
                shape.order()
            )));
        }
        for (k, w) in factors.iter().enumerate() {
            if w.nrows() != shape.dim(k) || w.ncols() != rank.cols(k) {
                return Err(Error::ShapeMismatch(format!(
                    "factor {k} is {}x{}, expected {}x{}",
                    w.nrows(),
                    w.ncols(),
                    shape.dim(k),
                    rank.cols(k)
                )));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "factor {k} has non-finite entries"
                )));
            }
        }
        Ok(TrPoint {
            shape,
            rank,
            factors,
            version: next_version(),
        })
    }

    pub fn zeros(shape: Shape, rank: TrRank) -> Result<Self> {
        let factors = (0..shape.order())
            .map(|k| DMatrix::zeros(shape.dim(k), rank.cols(k)))
            .collect();
        TrPoint::new(shape, rank, factors)
    }

    /// Factors with i.i.d. entries `scale * U[0, 1]`.
    pub fn random_uniform<R: Rng + ?Sized>(
        shape: Shape,
        rank: TrRank,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let factors = (0..shape.order())
            .map(|k| {
                DMatrix::from_fn(shape.dim(k), rank.cols(k), |_, _| {
                    scale * rng.random::<f64>()
                })
            })
            .collect();
        TrPoint::new(shape, rank, factors)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn rank(&self) -> &TrRank {
        &self.rank
    }

    pub fn order(&self) -> usize {
        self.shape.order()
    }

    pub fn factors(&self) -> &[DMatrix<f64>] {
        &self.factors
    }

    pub fn factor(&self, k: usize) -> &DMatrix<f64> {
        &self.factors[k]
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn into_factors(self) -> Vec<DMatrix<f64>> {
        self.factors
    }

    /// Core tensor `U_k = ten2(W_k)`.
    pub fn core(&self, k: usize) -> Result<Core3> {
        self.shape.check_mode(k)?;
        crate::tensor::ten2(&self.factors[k], self.rank.left(k), self.rank.right(k))
    }

    /// Lateral slice `U_k(i_k)` for a 1-based `i_k`.
    pub fn slice(&self, k: usize, i_k: usize) -> Result<DMatrix<f64>> {
        self.shape.check_mode(k)?;
        let n = self.shape.dim(k);
        if i_k == 0 || i_k > n {
            return Err(Error::IndexOutOfRange {
                mode: k,
                index: i_k,
                extent: n,
            });
        }
        Ok(self.slice0(k, i_k - 1))
    }

    pub(crate) fn slice0(&self, k: usize, i: usize) -> DMatrix<f64> {
        let (rl, rr) = (self.rank.left(k), self.rank.right(k));
        let w = &self.factors[k];
        DMatrix::from_fn(rl, rr, |a, b| w[(i, a + rl * b)])
    }

    /// `tr(U_1(i_1) ... U_d(i_d))`.
    pub fn entry(&self, idx: &MultiIndex) -> Result<f64> {
        let idx0 = idx.to_zero_based(&self.shape)?;
        let table = SliceTable::new(self);
        let mut ws = ChainWorkspace::new(&self.rank);
        Ok(table.entry(&idx0, &mut ws))
    }

    /// The full tensor `tau(W)`.
    pub fn tau(&self) -> Result<DenseTensor> {
        let table = SliceTable::new(self);
        let mut ws = ChainWorkspace::new(&self.rank);
        DenseTensor::from_fn(self.shape.clone(), |idx| table.entry(idx, &mut ws))
    }

    /// Explicit subchain unfolding `W_{!=k}`, `n_{-k} x r_k r_{k+1}`.
    ///
    /// Row `pi_k(i_{-k})` is `vec((U_{k+1}(i_{k+1}) ... U_d(i_d) U_1(i_1) ...
    /// U_{k-1}(i_{k-1}))^T)^T`. Exponential in `d`; meant for verification.
    pub fn subchain_naive(&self, k: usize) -> Result<DMatrix<f64>> {
        self.shape.check_mode(k)?;
        let d = self.order();
        let rows = self.shape.numel_except(k);
        let cols = self.rank.cols(k);
        if rows.saturating_mul(cols) > DENSE_LIMIT {
            return Err(Error::SizeGuard {
                requested: rows.saturating_mul(cols),
                limit: DENSE_LIMIT,
            });
        }
        let others: Vec<usize> = (0..d).filter(|&l| l != k).collect();
        let mut out = DMatrix::zeros(rows, cols);
        let mut idx = vec![0usize; d];
        for row in 0..rows {
            let mut off = row;
            for &l in &others {
                idx[l] = off % self.shape.dim(l);
                off /= self.shape.dim(l);
            }
            let mut prod = DMatrix::<f64>::identity(self.rank.right(k), self.rank.right(k));
            for step in 1..d {
                let j = (k + step) % d;
                prod *= self.slice0(j, idx[j]);
            }
            let pt = prod.transpose();
            for (c, v) in pt.iter().enumerate() {
                out[(row, c)] = *v;
            }
        }
        Ok(out)
    }

    pub fn as_tangent(&self) -> TangentVector {
        TangentVector::new(self.factors.clone())
    }

    /// `W + s * v`; the retraction is the identity.
    pub fn axpy(&self, s: f64, v: &TangentVector) -> Result<TrPoint> {
        self.check_tangent(v)?;
        let factors = self
            .factors
            .iter()
            .zip(&v.comps)
            .map(|(w, x)| w + x * s)
            .collect();
        TrPoint::new(self.shape.clone(), self.rank.clone(), factors)
    }

    /// `self - other` as a tangent vector.
    pub fn diff(&self, other: &TrPoint) -> Result<TangentVector> {
        if self.shape != other.shape || self.rank != other.rank {
            return Err(Error::ShapeMismatch("points of different format".into()));
        }
        Ok(TangentVector::new(
            self.factors
                .iter()
                .zip(&other.factors)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    /// `||W||_F^2 = sum_k ||W_k||_F^2`.
    pub fn norm_sq(&self) -> f64 {
        self.factors.iter().map(|w| w.norm_squared()).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Relabels modes `(1, ..., d) -> (2, ..., d, 1)`; represents the same
    /// tensor with its modes rotated.
    pub fn cyclic_shift(&self) -> TrPoint {
        let d = self.order();
        let rot = |v: &[usize]| (0..d).map(|k| v[(k + 1) % d]).collect::<Vec<_>>();
        let shape = Shape::new(rot(self.shape.dims())).expect("rotated shape is valid");
        let rank = TrRank::new(rot(self.rank.ranks())).expect("rotated rank is valid");
        let factors = (0..d).map(|k| self.factors[(k + 1) % d].clone()).collect();
        TrPoint::new(shape, rank, factors).expect("rotation preserves factor shapes")
    }

    /// Increases `r_k` by one. Existing entries are kept; the new rows of
    /// `U_k(i)` and new columns of `U_{k-1}(i)` are Gaussian with standard
    /// deviation `noise * ||W_m||_F / sqrt(n_m)` for the affected factor `m`.
    pub fn grow_rank<R: Rng + ?Sized>(&self, k: usize, noise: f64, rng: &mut R) -> Result<TrPoint> {
        self.shape.check_mode(k)?;
        let d = self.order();
        let prev = (k + d - 1) % d;
        let mut ranks = self.rank.ranks().to_vec();
        ranks[k] += 1;
        let rank = TrRank::new(ranks)?;
        let mut factors = self.factors.clone();
        let scale_of = |m: usize| {
            let s = noise * self.factors[m].norm() / (self.shape.dim(m) as f64).sqrt();
            if s > 0.0 {
                s
            } else {
                noise
            }
        };

        // core k: left bond grows, column a + r_k b -> a + (r_k + 1) b
        {
            let (rl, rr) = (self.rank.left(k), self.rank.right(k));
            let s = scale_of(k);
            let old = &self.factors[k];
            let mut w = DMatrix::zeros(self.shape.dim(k), (rl + 1) * rr);
            for i in 0..self.shape.dim(k) {
                for b in 0..rr {
                    for a in 0..=rl {
                        w[(i, a + (rl + 1) * b)] = if a < rl {
                            old[(i, a + rl * b)]
                        } else {
                            s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                        };
                    }
                }
            }
            factors[k] = w;
        }
        // core k-1: right bond grows, new columns appended at the end
        {
            let (rl, rr) = (self.rank.left(prev), self.rank.right(prev));
            let s = scale_of(prev);
            let old = &self.factors[prev];
            let mut w = DMatrix::zeros(self.shape.dim(prev), rl * (rr + 1));
            for i in 0..self.shape.dim(prev) {
                for c in 0..rl * (rr + 1) {
                    w[(i, c)] = if c < rl * rr {
                        old[(i, c)]
                    } else {
                        s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                    };
                }
            }
            factors[prev] = w;
        }
        TrPoint::new(self.shape.clone(), rank, factors)
    }

    pub(crate) fn check_tangent(&self, v: &TangentVector) -> Result<()> {
        if v.comps.len() != self.factors.len()
            || v.comps
                .iter()
                .zip(&self.factors)
                .any(|(x, w)| x.shape() != w.shape())
        {
            return Err(Error::ShapeMismatch(
                "tangent vector does not match the point's factor shapes".into(),
            ));
        }
        Ok(())
    }
}

/// `xi = (xi_1, ..., xi_d)`, shaped like a point's factors.
///
/// A vector may carry the version of the point it was computed at (gradients
/// do); arithmetic results are unanchored.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    comps: Vec<DMatrix<f64>>,
    anchor: Option<u64>,
}

impl TangentVector {
    pub fn new(comps: Vec<DMatrix<f64>>) -> Self {
        TangentVector {
            comps,
            anchor: None,
        }
    }

    pub fn zeros_like(p: &TrPoint) -> Self {
        TangentVector::new(
            p.factors
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
        )
    }

    /// Marks this vector as living at `p` (for example a gradient at `p`).
    pub fn anchored_at(mut self, p: &TrPoint) -> Self {
        self.anchor = Some(p.version);
        self
    }

    pub(crate) fn with_anchor(mut self, version: u64) -> Self {
        self.anchor = Some(version);
        self
    }

    pub fn anchor(&self) -> Option<u64> {
        self.anchor
    }

    pub fn comps(&self) -> &[DMatrix<f64>] {
        &self.comps
    }

    pub fn comp(&self, k: usize) -> &DMatrix<f64> {
        &self.comps[k]
    }

    pub fn into_comps(self) -> Vec<DMatrix<f64>> {
        self.comps
    }

    pub fn len(&self) -> usize {
        self.comps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.comps.is_empty()
    }

    pub fn comps_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.comps
    }

    fn check_same(&self, other: &TangentVector) -> Result<()> {
        if self.comps.len() != other.comps.len()
            || self
                .comps
                .iter()
                .zip(&other.comps)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::ShapeMismatch(
                "tangent vectors of different shape".into(),
            ));
        }
        Ok(())
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &TangentVector) -> Result<TangentVector> {
        self.check_same(other)?;
        Ok(TangentVector::new(
            self.comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a + b * s)
                .collect(),
        ))
    }

    pub fn sub(&self, other: &TangentVector) -> Result<TangentVector> {
        self.add_scaled(-1.0, other)
    }

    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector::new(self.comps.iter().map(|a| a * s).collect())
    }

    pub fn neg(&self) -> TangentVector {
        self.scaled(-1.0)
    }

    /// Euclidean (Frobenius) inner product `sum_k <xi_k, eta_k>`.
    pub fn inner(&self, other: &TangentVector) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.dot(b))
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.comps.iter().map(|a| a.norm_squared()).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Slices of every core laid out contiguously: slice `i` of mode `k` is the
/// `r_k x r_{k+1}` column-major block at `[i * r_k r_{k+1}, (i + 1) * ...)`.
pub(crate) struct SliceTable {
    data: Vec<Vec<f64>>,
    left: Vec<usize>,
    right: Vec<usize>,
}

impl SliceTable {
    pub(crate) fn new(p: &TrPoint) -> Self {
        let d = p.order();
        let mut data = Vec::with_capacity(d);
        for w in &p.factors {
            let (n, c) = (w.nrows(), w.ncols());
            let mut t = vec![0.0; n * c];
            for col in 0..c {
                for i in 0..n {
                    t[i * c + col] = w[(i, col)];
                }
            }
            data.push(t);
        }
        SliceTable {
            data,
            left: (0..d).map(|k| p.rank.left(k)).collect(),
            right: (0..d).map(|k| p.rank.right(k)).collect(),
        }
    }

    #[inline]
    pub(crate) fn slice(&self, k: usize, i: usize) -> &[f64] {
        let c = self.left[k] * self.right[k];
        &self.data[k][i * c..(i + 1) * c]
    }

    pub(crate) fn order(&self) -> usize {
        self.data.len()
    }

    pub(crate) fn left(&self, k: usize) -> usize {
        self.left[k]
    }

    pub(crate) fn right(&self, k: usize) -> usize {
        self.right[k]
    }

    /// `tr(U_1(i_1) ... U_d(i_d))` for a 0-based index.
    pub(crate) fn entry(&self, idx: &[usize], ws: &mut ChainWorkspace) -> f64 {
        let d = self.order();
        let r1 = self.left[0];
        let (acc, tmp) = (&mut ws.a, &mut ws.b);
        let first = self.slice(0, idx[0]);
        acc[..first.len()].copy_from_slice(first);
        let mut cols = self.right[0];
        for k in 1..d - 1 {
            let s = self.slice(k, idx[k]);
            small::matmul(acc, s, r1, cols, self.right[k], tmp);
            std::mem::swap(acc, tmp);
            cols = self.right[k];
        }
        small::trace_of_product(acc, self.slice(d - 1, idx[d - 1]), r1, cols)
    }
}

/// Scratch buffers sized for chained slice products.
pub(crate) struct ChainWorkspace {
    pub(crate) a: Vec<f64>,
    pub(crate) b: Vec<f64>,
}

impl ChainWorkspace {
    pub(crate) fn new(rank: &TrRank) -> Self {
        let rmax = rank.ranks().iter().copied().max().unwrap_or(1);
        ChainWorkspace {
            a: vec![0.0; rmax * rmax],
            b: vec![0.0; rmax * rmax],
        }
    }
}

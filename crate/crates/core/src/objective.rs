//! Sampling sets, residuals, the regularized completion objective and its
//! Euclidean gradient.
//!
//! Nothing here materializes `tau(W)` or `W_{!=k}`. Each sampled entry is
//! handled on its own: the prefix products `U_1 ... U_{k-1}` and suffix
//! products `U_{k+1} ... U_d` of its slices are built once and shared by all
//! `d` gradient blocks.
//!
//! Work over the samples is split into chunks whose boundaries depend only on
//! `|Omega|`; partial results are combined in chunk order, so results are
//! bit-identical regardless of the rayon pool size.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ring::{SliceTable, TangentVector, TrPoint};
use crate::small;
use crate::tensor::{DenseTensor, MultiIndex, Shape};

const MIN_CHUNK: usize = 512;
const MAX_CHUNKS: usize = 64;

pub(crate) fn chunk_len(n: usize) -> usize {
    MIN_CHUNK.max(n.div_ceil(MAX_CHUNKS))
}

/// A set of distinct entry positions, sorted by linear (column-major) offset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexSet {
    shape: Shape,
    offsets: Vec<usize>,
}

impl IndexSet {
    pub fn from_offsets(shape: Shape, mut offsets: Vec<usize>) -> Result<Self> {
        let n = shape.numel();
        offsets.sort_unstable();
        if let Some(&bad) = offsets.iter().find(|&&o| o >= n) {
            return Err(Error::InvalidParameter(format!(
                "offset {bad} outside a tensor of {n} entries"
            )));
        }
        if let Some(w) = offsets.windows(2).find(|w| w[0] == w[1]) {
            let mut idx = vec![0; shape.order()];
            shape.unravel(w[0], &mut idx);
            return Err(Error::DuplicateIndex(
                MultiIndex::from_zero_based(&idx).coords().to_vec(),
            ));
        }
        Ok(IndexSet { shape, offsets })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn contains(&self, offset: usize) -> bool {
        self.offsets.binary_search(&offset).is_ok()
    }

    /// Set union; both sets must share a shape.
    pub fn union(&self, other: &IndexSet) -> Result<IndexSet> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch("index sets of different shape".into()));
        }
        let mut all = self.offsets.clone();
        all.extend_from_slice(&other.offsets);
        all.sort_unstable();
        all.dedup();
        Ok(IndexSet {
            shape: self.shape.clone(),
            offsets: all,
        })
    }

    /// Observes `truth` on this set.
    pub fn observe(&self, truth: &DenseTensor) -> Result<SparseSample> {
        if truth.shape() != &self.shape {
            return Err(Error::ShapeMismatch(
                "truth tensor shape differs from set".into(),
            ));
        }
        let values = self.offsets.iter().map(|&o| truth.values()[o]).collect();
        SparseSample::from_sorted_offsets(self.shape.clone(), self.offsets.clone(), values)
    }

    /// Observes `f` (a function of the 0-based index) on this set.
    pub fn observe_with(&self, mut f: impl FnMut(&[usize]) -> f64) -> Result<SparseSample> {
        let mut idx = vec![0; self.shape.order()];
        let values = self
            .offsets
            .iter()
            .map(|&o| {
                self.shape.unravel(o, &mut idx);
                f(&idx)
            })
            .collect();
        SparseSample::from_sorted_offsets(self.shape.clone(), self.offsets.clone(), values)
    }
}

/// Draws `count` distinct positions uniformly without replacement from the
/// entries of `shape` not in `exclude`.
pub fn sample_uniform_excluding<R: Rng + ?Sized>(
    shape: &Shape,
    count: usize,
    exclude: Option<&IndexSet>,
    rng: &mut R,
) -> Result<IndexSet> {
    let excluded: &[usize] = exclude.map(|e| e.offsets()).unwrap_or(&[]);
    if let Some(e) = exclude {
        if e.shape() != shape {
            return Err(Error::ShapeMismatch(
                "exclusion set of different shape".into(),
            ));
        }
    }
    let avail = shape.numel() - excluded.len();
    if count == 0 || count > avail {
        return Err(Error::InvalidCount {
            count,
            total: avail,
        });
    }
    let mut ranks = rand::seq::index::sample(rng, avail, count).into_vec();
    ranks.sort_unstable();
    // map the r-th available position to its offset in one merge pass
    let mut offsets = Vec::with_capacity(count);
    let mut skipped = 0;
    for r in ranks {
        while skipped < excluded.len() && excluded[skipped] <= r + skipped {
            skipped += 1;
        }
        offsets.push(r + skipped);
    }
    IndexSet::from_offsets(shape.clone(), offsets)
}

/// Uniform sampling without replacement, deterministic per seed.
pub fn sample_uniform(shape: &Shape, count: usize, seed: u64) -> Result<IndexSet> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    sample_uniform_excluding(shape, count, None, &mut rng)
}

/// Observed entries `A(i), i in Omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSample {
    shape: Shape,
    offsets: Vec<usize>,
    // 0-based coordinates, `d` per sample
    coords: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSample {
    /// Builds a sample from 1-based indices in any order; duplicates and
    /// out-of-range indices are rejected.
    pub fn new(shape: Shape, indices: &[MultiIndex], values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        let mut pairs = Vec::with_capacity(indices.len());
        for (idx, &v) in indices.iter().zip(&values) {
            let idx0 = idx.to_zero_based(&shape)?;
            pairs.push((shape.offset(&idx0), v));
        }
        pairs.sort_by_key(|&(o, _)| o);
        if let Some(w) = pairs.windows(2).find(|w| w[0].0 == w[1].0) {
            let mut idx = vec![0; shape.order()];
            shape.unravel(w[0].0, &mut idx);
            return Err(Error::DuplicateIndex(
                MultiIndex::from_zero_based(&idx).coords().to_vec(),
            ));
        }
        let (offsets, values) = pairs.into_iter().unzip();
        SparseSample::from_sorted_offsets(shape, offsets, values)
    }

    fn from_sorted_offsets(shape: Shape, offsets: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "observed values must be finite".into(),
            ));
        }
        let d = shape.order();
        let mut coords = vec![0; offsets.len() * d];
        for (s, &o) in offsets.iter().enumerate() {
            shape.unravel(o, &mut coords[s * d..(s + 1) * d]);
        }
        Ok(SparseSample {
            shape,
            offsets,
            coords,
            values,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// 0-based coordinates of sample `s`.
    pub fn index0(&self, s: usize) -> &[usize] {
        let d = self.shape.order();
        &self.coords[s * d..(s + 1) * d]
    }

    pub fn multi_index(&self, s: usize) -> MultiIndex {
        MultiIndex::from_zero_based(self.index0(s))
    }

    pub fn index_set(&self) -> IndexSet {
        IndexSet {
            shape: self.shape.clone(),
            offsets: self.offsets.clone(),
        }
    }

    /// `p = |Omega| / (n_1 ... n_d)`.
    pub fn sampling_rate(&self) -> f64 {
        self.len() as f64 / self.shape.numel() as f64
    }

    pub fn value_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Same positions with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<SparseSample> {
        if values.len() != self.len() {
            return Err(Error::ShapeMismatch(
                "value count differs from sample size".into(),
            ));
        }
        let mut out = self.clone();
        out.values = values;
        Ok(out)
    }

    /// Splits into (kept, held-out) by a set of held-out offsets.
    pub fn partition(&self, held_out: &IndexSet) -> Result<(SparseSample, SparseSample)> {
        let mut keep = (Vec::new(), Vec::new());
        let mut hold = (Vec::new(), Vec::new());
        for (&o, &v) in self.offsets.iter().zip(&self.values) {
            let dst = if held_out.contains(o) {
                &mut hold
            } else {
                &mut keep
            };
            dst.0.push(o);
            dst.1.push(v);
        }
        Ok((
            SparseSample::from_sorted_offsets(self.shape.clone(), keep.0, keep.1)?,
            SparseSample::from_sorted_offsets(self.shape.clone(), hold.0, hold.1)?,
        ))
    }

    pub(crate) fn check_point(&self, p: &TrPoint) -> Result<()> {
        if p.shape() != &self.shape {
            return Err(Error::ShapeMismatch(format!(
                "point shape {:?} vs sample shape {:?}",
                p.shape().dims(),
                self.shape.dims()
            )));
        }
        Ok(())
    }

    pub(crate) fn chunks(&self) -> impl IndexedParallelIterator<Item = std::ops::Range<usize>> {
        let n = self.len();
        let c = chunk_len(n);
        (0..n.div_ceil(c))
            .into_par_iter()
            .map(move |j| j * c..((j + 1) * c).min(n))
    }
}

/// `S = P_Omega(tau(W)) - P_Omega(A)`, stored on the sample's positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    values: Vec<f64>,
}

impl Residual {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm_sq(&self) -> f64 {
        sum_sq_ordered(&self.values)
    }
}

fn sum_sq_ordered(v: &[f64]) -> f64 {
    let c = chunk_len(v.len());
    v.chunks(c)
        .map(|ch| ch.iter().map(|x| x * x).sum::<f64>())
        .sum()
}

/// `lambda` and the sampling rate `p` of `f = f_Omega + lambda/2 ||W||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub lambda: f64,
    pub p: f64,
}

impl ObjectiveConfig {
    pub fn new(lambda: f64, p: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "sampling rate must be in (0, 1], got {p}"
            )));
        }
        Ok(ObjectiveConfig { lambda, p })
    }

    pub fn for_sample(data: &SparseSample, lambda: f64) -> Result<Self> {
        ObjectiveConfig::new(lambda, data.sampling_rate())
    }
}

/// Scratch space for per-sample prefix/suffix products.
pub(crate) struct SubchainWorkspace {
    prefix: Vec<Vec<f64>>,
    suffix: Vec<Vec<f64>>,
    prod: Vec<f64>,
    pub(crate) row: Vec<f64>,
    tmp: Vec<f64>,
}

impl SubchainWorkspace {
    pub(crate) fn new(table: &SliceTable) -> Self {
        let d = table.order();
        let rmax = (0..d).map(|k| table.left(k)).max().unwrap_or(1);
        let sq = rmax * rmax;
        SubchainWorkspace {
            prefix: vec![vec![0.0; sq]; d],
            suffix: vec![vec![0.0; sq]; d],
            prod: vec![0.0; sq],
            row: vec![0.0; sq],
            tmp: vec![0.0; sq],
        }
    }
}

impl SliceTable {
    /// Fills the prefixes `L_k = U_1 ... U_{k-1}` (`r_1 x r_k`) and returns the
    /// entry `tr(L_{d-1} U_d)`.
    pub(crate) fn prefixes(&self, idx: &[usize], ws: &mut SubchainWorkspace) -> f64 {
        let d = self.order();
        let r1 = self.left(0);
        let id = &mut ws.prefix[0];
        id[..r1 * r1].fill(0.0);
        for a in 0..r1 {
            id[a + r1 * a] = 1.0;
        }
        {
            let s = self.slice(0, idx[0]);
            ws.prefix[1][..s.len()].copy_from_slice(s);
        }
        for k in 2..d {
            let (done, rest) = ws.prefix.split_at_mut(k);
            small::matmul(
                &done[k - 1],
                self.slice(k - 1, idx[k - 1]),
                r1,
                self.left(k - 1),
                self.right(k - 1),
                &mut rest[0],
            );
        }
        small::trace_of_product(
            &ws.prefix[d - 1],
            self.slice(d - 1, idx[d - 1]),
            r1,
            self.left(d - 1),
        )
    }

    /// After [`SliceTable::prefixes`], yields `w_k(i_{-k}) = vec(P_k^T)` for
    /// every mode, where `P_k = U_{k+1} ... U_d U_1 ... U_{k-1}`.
    pub(crate) fn for_each_subchain_row(
        &self,
        idx: &[usize],
        ws: &mut SubchainWorkspace,
        mut f: impl FnMut(usize, &[f64]),
    ) {
        let d = self.order();
        let r1 = self.left(0);
        // suffixes R_k = U_{k+1} ... U_d, r_{k+1} x r_1
        {
            let s = self.slice(d - 1, idx[d - 1]);
            ws.suffix[d - 2][..s.len()].copy_from_slice(s);
        }
        for k in (0..d.saturating_sub(2)).rev() {
            let (head, tail) = ws.suffix.split_at_mut(k + 1);
            small::matmul(
                self.slice(k + 1, idx[k + 1]),
                &tail[0],
                self.left(k + 1),
                self.right(k + 1),
                r1,
                &mut head[k],
            );
        }
        for k in 0..d {
            let (rl, rr) = (self.left(k), self.right(k));
            let p: &[f64] = if k == 0 {
                &ws.suffix[0]
            } else if k == d - 1 {
                &ws.prefix[d - 1]
            } else {
                small::matmul(&ws.suffix[k], &ws.prefix[k], rr, r1, rl, &mut ws.prod);
                &ws.prod
            };
            small::vec_transpose(p, rr, rl, &mut ws.row);
            f(k, &ws.row[..rl * rr]);
        }
    }

    /// `w_k(i_{-k})` for a single mode, built directly from the chain.
    pub(crate) fn subchain_row<'w>(
        &self,
        k: usize,
        idx: &[usize],
        ws: &'w mut SubchainWorkspace,
    ) -> &'w [f64] {
        let d = self.order();
        let (rl, rr) = (self.left(k), self.right(k));
        let j0 = (k + 1) % d;
        let s = self.slice(j0, idx[j0]);
        ws.prod[..s.len()].copy_from_slice(s);
        let mut cols = self.right(j0);
        for step in 2..d {
            let j = (k + step) % d;
            small::matmul(
                &ws.prod,
                self.slice(j, idx[j]),
                rr,
                cols,
                self.right(j),
                &mut ws.tmp,
            );
            std::mem::swap(&mut ws.prod, &mut ws.tmp);
            cols = self.right(j);
        }
        small::vec_transpose(&ws.prod, rr, rl, &mut ws.row);
        &ws.row[..rl * rr]
    }
}

/// Entries of `tau(p)` at the positions of `set` (0-based coordinates).
pub(crate) fn entries_at(p: &TrPoint, data: &SparseSample) -> Vec<f64> {
    let table = SliceTable::new(p);
    let parts: Vec<Vec<f64>> = data
        .chunks()
        .map(|range| {
            let mut ws = crate::ring::ChainWorkspace::new(p.rank());
            range
                .map(|s| table.entry(data.index0(s), &mut ws))
                .collect()
        })
        .collect();
    parts.concat()
}

/// `S(i) = tau(p)(i) - A(i)` for `i in Omega`.
pub fn residual(p: &TrPoint, data: &SparseSample) -> Result<Residual> {
    data.check_point(p)?;
    let mut values = entries_at(p, data);
    for (v, a) in values.iter_mut().zip(data.values()) {
        *v -= a;
    }
    Ok(Residual { values })
}

/// `f(W) = 1/(2p) sum_{Omega} S(i)^2 + lambda/2 ||W||_F^2`.
pub fn cost(p: &TrPoint, data: &SparseSample, cfg: &ObjectiveConfig) -> Result<f64> {
    let r = residual(p, data)?;
    Ok(cost_from_residual(&r, p, cfg))
}

pub(crate) fn cost_from_residual(r: &Residual, p: &TrPoint, cfg: &ObjectiveConfig) -> f64 {
    r.norm_sq() / (2.0 * cfg.p) + 0.5 * cfg.lambda * p.norm_sq()
}

/// Cost, residual and Euclidean gradient in a single pass over `Omega`.
pub struct CostGrad {
    pub cost: f64,
    pub residual: Residual,
    pub grad: TangentVector,
}

/// `G_k = (1/p) S_(k) W_{!=k} + lambda W_k` by per-sample accumulation.
pub fn euclid_grad(
    p: &TrPoint,
    data: &SparseSample,
    cfg: &ObjectiveConfig,
) -> Result<TangentVector> {
    Ok(cost_and_grad(p, data, cfg)?.grad)
}

pub fn cost_and_grad(p: &TrPoint, data: &SparseSample, cfg: &ObjectiveConfig) -> Result<CostGrad> {
    data.check_point(p)?;
    let d = p.order();
    let table = SliceTable::new(p);
    let cols: Vec<usize> = (0..d).map(|k| p.rank().cols(k)).collect();
    let rows: Vec<usize> = p.shape().dims().to_vec();
    let inv_p = 1.0 / cfg.p;

    struct Part {
        residual: Vec<f64>,
        grad: Vec<Vec<f64>>,
    }
    let parts: Vec<Part> = data
        .chunks()
        .map(|range| {
            let mut ws = SubchainWorkspace::new(&table);
            let mut grad: Vec<Vec<f64>> = (0..d).map(|k| vec![0.0; rows[k] * cols[k]]).collect();
            let mut res = Vec::with_capacity(range.len());
            for s in range {
                let idx = data.index0(s);
                let r = table.prefixes(idx, &mut ws) - data.values()[s];
                res.push(r);
                if r == 0.0 {
                    continue;
                }
                let w = r * inv_p;
                table.for_each_subchain_row(idx, &mut ws, |k, row| {
                    let c = cols[k];
                    let dst = &mut grad[k][idx[k] * c..(idx[k] + 1) * c];
                    for (g, &x) in dst.iter_mut().zip(row) {
                        *g += w * x;
                    }
                });
            }
            Part {
                residual: res,
                grad,
            }
        })
        .collect();

    let mut acc: Vec<Vec<f64>> = (0..d).map(|k| vec![0.0; rows[k] * cols[k]]).collect();
    let mut res = Vec::with_capacity(data.len());
    for part in parts {
        res.extend_from_slice(&part.residual);
        for (a, g) in acc.iter_mut().zip(part.grad) {
            for (x, y) in a.iter_mut().zip(g) {
                *x += y;
            }
        }
    }
    let comps = (0..d)
        .map(|k| {
            let rowmajor = &acc[k];
            let c = cols[k];
            let w = p.factor(k);
            DMatrix::from_fn(rows[k], c, |i, j| {
                rowmajor[i * c + j] + cfg.lambda * w[(i, j)]
            })
        })
        .collect();
    let residual = Residual { values: res };
    let cost = cost_from_residual(&residual, p, cfg);
    Ok(CostGrad {
        cost,
        residual,
        grad: TangentVector::new(comps).anchored_at(p),
    })
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn full_count_returns_every_index() {
        let s = Shape::new(vec![2, 3, 2]).unwrap();
        let set = sample_uniform(&s, 12, 3).unwrap();
        assert_eq!(set.offsets(), (0..12).collect::<Vec<_>>().as_slice());
        assert_eq!(
            sample_uniform(&s, 5, 9).unwrap(),
            sample_uniform(&s, 5, 9).unwrap()
        );
        assert!(matches!(
            sample_uniform(&s, 0, 1),
            Err(Error::InvalidCount { .. })
        ));
        assert!(matches!(
            sample_uniform(&s, 13, 1),
            Err(Error::InvalidCount { .. })
        ));
    }

    #[test]
    fn excluded_positions_are_never_drawn() {
        use rand::SeedableRng;
        let s = Shape::new(vec![4, 4, 4]).unwrap();
        let omega = sample_uniform(&s, 40, 1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let gamma = sample_uniform_excluding(&s, 24, Some(&omega), &mut rng).unwrap();
        assert!(gamma.offsets().iter().all(|&o| !omega.contains(o)));
        assert_eq!(omega.union(&gamma).unwrap().len(), 64);
        assert!(sample_uniform_excluding(&s, 25, Some(&omega), &mut rng).is_err());
    }

    #[test]
    fn inclusion_frequency_is_uniform() {
        // 10^4 draws of 32 out of 64; each position included with p = 1/2,
        // count ~ Binomial-like with sd = sqrt(1e4 * 0.25) = 50, bound at 4 sd over 64 positions
        let s = Shape::new(vec![4, 4, 4]).unwrap();
        let mut counts = [0usize; 64];
        for seed in 0..10_000u64 {
            for &o in sample_uniform(&s, 32, seed).unwrap().offsets() {
                counts[o] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 - 5000.0).abs() < 4.0 * 50.0, "count {c}");
        }
    }

    #[test]
    fn sample_rejects_duplicates_and_out_of_range() {
        let s = Shape::new(vec![2, 2, 2]).unwrap();
        let idx = vec![
            MultiIndex::new(vec![1, 1, 1]),
            MultiIndex::new(vec![1, 1, 1]),
        ];
        assert!(matches!(
            SparseSample::new(s.clone(), &idx, vec![1.0, 2.0]),
            Err(Error::DuplicateIndex(_))
        ));
        let idx = vec![MultiIndex::new(vec![3, 1, 1])];
        assert!(SparseSample::new(s.clone(), &idx, vec![1.0]).is_err());
        let idx = vec![
            MultiIndex::new(vec![2, 1, 1]),
            MultiIndex::new(vec![1, 2, 1]),
        ];
        let sample = SparseSample::new(s, &idx, vec![5.0, 6.0]).unwrap();
        // sorted by linear offset
        assert_eq!(sample.offsets(), &[1, 2]);
        assert_eq!(sample.values(), &[5.0, 6.0]);
        assert_eq!(sample.multi_index(1).coords(), &[1, 2, 1]);
        assert!((sample.sampling_rate() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn residual_of_exact_data_is_zero() {
        let p = random_point(&[3, 4, 2], &[2, 2, 3], 1);
        let set = sample_uniform(p.shape(), 10, 4).unwrap();
        let data = set.observe(&p.tau().unwrap()).unwrap();
        assert!(residual(&p, &data)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v.abs() < 1e-14));
        let cfg = ObjectiveConfig::for_sample(&data, 0.0).unwrap();
        assert!(cost(&p, &data, &cfg).unwrap() < 1e-28);
        let g = euclid_grad(&p, &data, &cfg).unwrap();
        assert!(g.frob_norm() < 1e-13);
    }

    #[test]
    fn zero_point_residual_and_cost() {
        let p = TrPoint::zeros(
            Shape::new(vec![3, 3, 3]).unwrap(),
            crate::ring::TrRank::uniform(3, 2).unwrap(),
        )
        .unwrap();
        let data = random_sample(p.shape(), 9, 2);
        let r = residual(&p, &data).unwrap();
        for (a, b) in r.values().iter().zip(data.values()) {
            assert_eq!(*a, -b);
        }
        let cfg = ObjectiveConfig::for_sample(&data, 0.0).unwrap();
        let want = data.value_norm().powi(2) / (2.0 * cfg.p);
        assert!((cost(&p, &data, &cfg).unwrap() - want).abs() < 1e-14);
        let cfg = ObjectiveConfig::for_sample(&data, 0.7).unwrap();
        assert_eq!(euclid_grad(&p, &data, &cfg).unwrap().frob_norm(), 0.0);
    }

    #[test]
    fn residual_and_cost_match_dense_oracle() {
        let p = random_point(&[3, 2, 4, 2], &[2, 3, 1, 2], 3);
        let data = random_sample(p.shape(), 20, 8);
        let t = p.tau().unwrap();
        let r = residual(&p, &data).unwrap();
        for s in 0..data.len() {
            let want = t.values()[data.offsets()[s]] - data.values()[s];
            assert_eq!(r.values()[s], want);
        }
        let cfg = ObjectiveConfig::for_sample(&data, 0.3).unwrap();
        let dense: f64 =
            r.values().iter().map(|v| v * v).sum::<f64>() / (2.0 * cfg.p) + 0.15 * p.norm_sq();
        let c = cost(&p, &data, &cfg).unwrap();
        assert!((c - dense).abs() <= 1e-12 * dense);
        assert!(c >= 0.15 * p.norm_sq());
    }

    #[test]
    fn gradient_matches_dense_formula_and_finite_differences() {
        let p = random_point(&[3, 3, 3], &[2, 2, 2], 21);
        let data = random_sample(p.shape(), 10, 22);
        let cfg = ObjectiveConfig::for_sample(&data, 0.1).unwrap();
        let g = euclid_grad(&p, &data, &cfg).unwrap();
        for k in 0..3 {
            let sk = dense_residual_unfolding(&p, &data, k);
            let want = &sk * p.subchain_naive(k).unwrap() / cfg.p + p.factor(k) * cfg.lambda;
            let err = (g.comp(k) - &want).norm() / want.norm();
            assert!(err < 1e-12, "mode {k}: {err}");
        }
        let h = 1e-6;
        for k in 0..3 {
            for (i, j) in [(0, 0), (1, 3), (2, 2)] {
                let mut e = TangentVector::zeros_like(&p);
                e.comps_mut()[k][(i, j)] = 1.0;
                let fp = cost(&p.axpy(h, &e).unwrap(), &data, &cfg).unwrap();
                let fm = cost(&p.axpy(-h, &e).unwrap(), &data, &cfg).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let an = g.comp(k)[(i, j)];
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn subchain_row_matches_shared_pass() {
        let p = random_point(&[3, 2, 4, 2], &[2, 3, 1, 2], 5);
        let table = SliceTable::new(&p);
        let mut ws = SubchainWorkspace::new(&table);
        let mut ws2 = SubchainWorkspace::new(&table);
        let idx = [2, 1, 3, 0];
        let e = table.prefixes(&idx, &mut ws);
        let direct = p.entry(&MultiIndex::from_zero_based(&idx)).unwrap();
        assert!((e - direct).abs() < 1e-14);
        let mut rows = Vec::new();
        table.for_each_subchain_row(&idx, &mut ws, |k, r| rows.push((k, r.to_vec())));
        for (k, r) in rows {
            let single = table.subchain_row(k, &idx, &mut ws2).to_vec();
            for (a, b) in r.iter().zip(&single) {
                assert!((a - b).abs() < 1e-14);
            }
            // entry = <row of W_k, w_k>
            let wk: f64 = (0..p.rank().cols(k))
                .map(|c| p.factor(k)[(idx[k], c)] * r[c])
                .sum();
            assert!((wk - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn chunked_reduction_is_deterministic_across_pool_sizes() {
        let p = random_point(&[12, 11, 10], &[3, 2, 3], 3);
        let data = random_sample(p.shape(), 1200, 4);
        let cfg = ObjectiveConfig::for_sample(&data, 0.0).unwrap();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| cost_and_grad(&p, &data, &cfg).unwrap())
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.cost.to_bits(), b.cost.to_bits());
        assert_eq!(a.grad, b.grad);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn grad_agrees_with_naive_and_directional_derivative(
                d in 3usize..=4, seed in 0u64..10_000
            ) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let dims: Vec<usize> = (0..d).map(|_| rng.random_range(2..=4)).collect();
                let ranks: Vec<usize> = (0..d).map(|_| rng.random_range(1..=3)).collect();
                let p = random_point(&dims, &ranks, seed);
                let n = p.shape().numel();
                let data = random_sample(p.shape(), rng.random_range(1..=n.min(30)), seed + 1);
                let cfg = ObjectiveConfig::for_sample(&data, rng.random::<f64>()).unwrap();
                let g = euclid_grad(&p, &data, &cfg).unwrap();
                for k in 0..d {
                    let sk = dense_residual_unfolding(&p, &data, k);
                    let want = &sk * p.subchain_naive(k).unwrap() / cfg.p + p.factor(k) * cfg.lambda;
                    let scale = want.norm().max(1e-300);
                    prop_assert!((g.comp(k) - &want).norm() <= 1e-12 * scale);
                }
                let mut v = random_tangent(&p, seed + 2);
                v = v.scaled(1.0 / v.frob_norm());
                let h = 1e-6;
                let fp = cost(&p.axpy(h, &v).unwrap(), &data, &cfg).unwrap();
                let fm = cost(&p.axpy(-h, &v).unwrap(), &data, &cfg).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                let an = g.inner(&v).unwrap();
                prop_assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{} vs {}", fd, an);
                prop_assert!(cost(&p, &data, &cfg).unwrap() >= 0.5 * cfg.lambda * p.norm_sq());
            }
        }
    }
}

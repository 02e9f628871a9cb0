//! Dense tensors, multi-indices and mode-k matricization.
//!
//! Storage is column-major over `(i_1, ..., i_d)`: the first index varies
//! fastest, so the mode-1 unfolding is a plain reshape. Multi-indices handed
//! across the public API are 1-based; everything below this module works with
//! 0-based offsets. Modes are 0-based (`0..d`).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest dense tensor this crate will materialize.
pub const DENSE_LIMIT: usize = 1 << 28;

/// Extents `(n_1, ..., n_d)` with `d >= 3`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape {
    dims: Vec<usize>,
}

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.len() < 3 {
            return Err(Error::InvalidShape(format!(
                "order must be at least 3, got {}",
                dims.len()
            )));
        }
        if let Some(k) = dims.iter().position(|&n| n == 0) {
            return Err(Error::InvalidShape(format!("extent of mode {k} is zero")));
        }
        dims.iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .ok_or_else(|| Error::InvalidShape("entry count overflows usize".into()))?;
        Ok(Shape { dims })
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self, k: usize) -> usize {
        self.dims[k]
    }

    /// Total number of entries `n_1 * ... * n_d`.
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// `n_{-k}`, the product of all extents except mode `k`.
    pub fn numel_except(&self, k: usize) -> usize {
        self.dims
            .iter()
            .enumerate()
            .filter(|&(l, _)| l != k)
            .map(|(_, &n)| n)
            .product()
    }

    pub(crate) fn check_mode(&self, k: usize) -> Result<()> {
        if k < self.order() {
            Ok(())
        } else {
            Err(Error::InvalidMode {
                mode: k,
                order: self.order(),
            })
        }
    }

    /// Column-major offset of a 0-based multi-index.
    pub(crate) fn offset(&self, idx: &[usize]) -> usize {
        let mut off = 0;
        let mut stride = 1;
        for (i, n) in idx.iter().zip(&self.dims) {
            off += i * stride;
            stride *= n;
        }
        off
    }

    /// Inverse of [`Shape::offset`].
    pub(crate) fn unravel(&self, mut off: usize, out: &mut [usize]) {
        for (slot, &n) in out.iter_mut().zip(&self.dims) {
            *slot = off % n;
            off /= n;
        }
    }

    pub fn check_index0(&self, idx: &[usize]) -> Result<()> {
        if idx.len() != self.order() {
            return Err(Error::ShapeMismatch(format!(
                "multi-index of length {} for an order-{} tensor",
                idx.len(),
                self.order()
            )));
        }
        for (k, (&i, &n)) in idx.iter().zip(&self.dims).enumerate() {
            if i >= n {
                return Err(Error::IndexOutOfRange {
                    mode: k,
                    index: i + 1,
                    extent: n,
                });
            }
        }
        Ok(())
    }

    pub(crate) fn guard_dense(&self) -> Result<usize> {
        let n = self.numel();
        if n > DENSE_LIMIT {
            Err(Error::SizeGuard {
                requested: n,
                limit: DENSE_LIMIT,
            })
        } else {
            Ok(n)
        }
    }
}

/// A 1-based multi-index `(i_1, ..., i_d)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<usize>);

impl MultiIndex {
    pub fn new(coords: impl Into<Vec<usize>>) -> Self {
        MultiIndex(coords.into())
    }

    pub fn coords(&self) -> &[usize] {
        &self.0
    }

    /// Validates against `shape` and converts to 0-based offsets.
    pub fn to_zero_based(&self, shape: &Shape) -> Result<Vec<usize>> {
        if self.0.len() != shape.order() {
            return Err(Error::ShapeMismatch(format!(
                "multi-index of length {} for an order-{} tensor",
                self.0.len(),
                shape.order()
            )));
        }
        self.0
            .iter()
            .zip(shape.dims())
            .enumerate()
            .map(|(k, (&i, &n))| {
                if i == 0 || i > n {
                    Err(Error::IndexOutOfRange {
                        mode: k,
                        index: i,
                        extent: n,
                    })
                } else {
                    Ok(i - 1)
                }
            })
            .collect()
    }

    pub fn from_zero_based(idx: &[usize]) -> Self {
        MultiIndex(idx.iter().map(|i| i + 1).collect())
    }
}

/// The column index map of the mode-`k` unfolding.
///
/// `reduced` holds the 1-based indices of every mode except `k`, in natural
/// order. Returns the 1-based linear index `1 + sum_{l != k} (i_l - 1) J_l`
/// with `J_l` the product of the extents of the non-`k` modes preceding `l`.
pub fn pi_k(shape: &Shape, k: usize, reduced: &[usize]) -> Result<usize> {
    shape.check_mode(k)?;
    if reduced.len() + 1 != shape.order() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} reduced indices, got {}",
            shape.order() - 1,
            reduced.len()
        )));
    }
    let mut lin = 0;
    let mut stride = 1;
    let modes = (0..shape.order()).filter(|&l| l != k);
    for (l, &i) in modes.zip(reduced) {
        let n = shape.dim(l);
        if i == 0 || i > n {
            return Err(Error::IndexOutOfRange {
                mode: l,
                index: i,
                extent: n,
            });
        }
        lin += (i - 1) * stride;
        stride *= n;
    }
    Ok(lin + 1)
}

/// A dense real tensor in column-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Shape,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.numel() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} entries",
                values.len(),
                shape.numel()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "tensor values must be finite".into(),
            ));
        }
        Ok(DenseTensor { shape, values })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        let n = shape.guard_dense()?;
        Ok(DenseTensor {
            shape,
            values: vec![0.0; n],
        })
    }

    /// Builds a tensor from a function of the 0-based multi-index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let n = shape.guard_dense()?;
        let mut idx = vec![0; shape.order()];
        let mut values = Vec::with_capacity(n);
        for off in 0..n {
            shape.unravel(off, &mut idx);
            values.push(f(&idx));
        }
        DenseTensor::new(shape, values)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, idx: &MultiIndex) -> Result<f64> {
        let idx0 = idx.to_zero_based(&self.shape)?;
        Ok(self.values[self.shape.offset(&idx0)])
    }

    /// Entry at a 0-based index; panics when out of range.
    pub fn get0(&self, idx0: &[usize]) -> f64 {
        self.values[self.shape.offset(idx0)]
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `self + alpha * other`.
    pub fn add_scaled(&self, alpha: f64, other: &DenseTensor) -> Result<DenseTensor> {
        self.check_same(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a + alpha * b)
            .collect();
        Ok(DenseTensor {
            shape: self.shape.clone(),
            values,
        })
    }

    pub fn scaled(&self, alpha: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| alpha * v).collect(),
        }
    }

    fn check_same(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape.dims(),
                other.shape.dims()
            )));
        }
        Ok(())
    }

    /// Mode-`k` unfolding, an `n_k x n_{-k}` matrix.
    pub fn unfold(&self, k: usize) -> Result<DMatrix<f64>> {
        self.shape.check_mode(k)?;
        let (left, nk, right) = split_mode(&self.shape, k);
        let mut m = DMatrix::zeros(nk, left * right);
        for b in 0..right {
            for i in 0..nk {
                let base = left * (i + nk * b);
                for a in 0..left {
                    m[(i, a + left * b)] = self.values[base + a];
                }
            }
        }
        Ok(m)
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &DMatrix<f64>, k: usize, shape: &Shape) -> Result<DenseTensor> {
        shape.check_mode(k)?;
        let (left, nk, right) = split_mode(shape, k);
        if m.nrows() != nk || m.ncols() != left * right {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix cannot fold into mode {k} of {:?}",
                m.nrows(),
                m.ncols(),
                shape.dims()
            )));
        }
        let mut values = vec![0.0; shape.guard_dense()?];
        for b in 0..right {
            for i in 0..nk {
                let base = left * (i + nk * b);
                for a in 0..left {
                    values[base + a] = m[(i, a + left * b)];
                }
            }
        }
        DenseTensor::new(shape.clone(), values)
    }

    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        self.check_same(other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn frob_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `(prod_{l<k} n_l, n_k, prod_{l>k} n_l)`.
fn split_mode(shape: &Shape, k: usize) -> (usize, usize, usize) {
    let left = shape.dims()[..k].iter().product();
    let right = shape.dims()[k + 1..].iter().product();
    (left, shape.dim(k), right)
}

/// A third-order TR core of shape `r_k x n_k x r_{k+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Core3 {
    r_left: usize,
    n: usize,
    r_right: usize,
    // column-major over (a, i, b)
    values: Vec<f64>,
}

impl Core3 {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.r_left, self.n, self.r_right)
    }

    /// 0-based entry `(a, i, b)`.
    pub fn get(&self, a: usize, i: usize, b: usize) -> f64 {
        self.values[a + self.r_left * (i + self.n * b)]
    }

    /// Lateral slice `U(i)`, an `r_k x r_{k+1}` matrix.
    pub fn slice(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.r_left, self.r_right, |a, b| self.get(a, i, b))
    }

    /// Mode-2 unfolding, `n_k x r_k r_{k+1}`.
    pub fn unfold2(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.r_left * self.r_right, |i, c| {
            self.get(c % self.r_left, i, c / self.r_left)
        })
    }
}

/// Second tensorization: `ten2(W)(a, i, b) = W(i, a + b r_k)`.
pub fn ten2(w: &DMatrix<f64>, r_left: usize, r_right: usize) -> Result<Core3> {
    if r_left == 0 || r_right == 0 || w.ncols() != r_left * r_right {
        return Err(Error::ShapeMismatch(format!(
            "{} columns cannot tensorize with ranks ({r_left}, {r_right})",
            w.ncols()
        )));
    }
    let n = w.nrows();
    let mut values = vec![0.0; r_left * n * r_right];
    for b in 0..r_right {
        for i in 0..n {
            for a in 0..r_left {
                values[a + r_left * (i + n * b)] = w[(i, a + r_left * b)];
            }
        }
    }
    Ok(Core3 {
        r_left,
        n,
        r_right,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enumerate_reduced(shape: &Shape, k: usize) -> Vec<Vec<usize>> {
        // lexicographic with the first non-k mode fastest
        let dims: Vec<usize> = (0..shape.order())
            .filter(|&l| l != k)
            .map(|l| shape.dim(l))
            .collect();
        let total: usize = dims.iter().product();
        (0..total)
            .map(|mut off| {
                dims.iter()
                    .map(|&n| {
                        let i = off % n + 1;
                        off /= n;
                        i
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn pi_k_examples() {
        let s = Shape::new(vec![2, 3, 4]).unwrap();
        assert_eq!(pi_k(&s, 0, &[3, 4]).unwrap(), 12);
        assert_eq!(pi_k(&s, 1, &[1, 1]).unwrap(), 1);
        assert_eq!(pi_k(&s, 1, &[2, 3]).unwrap(), 6);
    }

    #[test]
    fn pi_k_matches_enumeration_order() {
        let s = Shape::new(vec![2, 3, 4]).unwrap();
        for k in 0..3 {
            for (pos, red) in enumerate_reduced(&s, k).iter().enumerate() {
                assert_eq!(pi_k(&s, k, red).unwrap(), pos + 1);
            }
        }
    }

    #[test]
    fn pi_k_is_bijective_for_small_shapes() {
        for d in 3..=4 {
            let mut dims = vec![1; d];
            loop {
                let s = Shape::new(dims.clone()).unwrap();
                for k in 0..d {
                    let mut seen = vec![false; s.numel_except(k)];
                    for red in enumerate_reduced(&s, k) {
                        let j = pi_k(&s, k, &red).unwrap();
                        assert!(!seen[j - 1]);
                        seen[j - 1] = true;
                    }
                    assert!(seen.iter().all(|&b| b));
                }
                // odometer over dims in 1..=4
                let mut l = 0;
                while l < d && dims[l] == 4 {
                    dims[l] = 1;
                    l += 1;
                }
                if l == d {
                    break;
                }
                dims[l] += 1;
            }
        }
    }

    #[test]
    fn pi_k_errors() {
        let s = Shape::new(vec![2, 3, 4]).unwrap();
        assert!(matches!(
            pi_k(&s, 3, &[1, 1]),
            Err(Error::InvalidMode { .. })
        ));
        assert!(matches!(
            pi_k(&s, 0, &[4, 1]),
            Err(Error::IndexOutOfRange { mode: 1, .. })
        ));
        assert!(pi_k(&s, 0, &[0, 1]).is_err());
        assert!(pi_k(&s, 0, &[1]).is_err());
    }

    #[test]
    fn shape_rejects_low_order_and_zero_extent() {
        assert!(Shape::new(vec![2, 2]).is_err());
        assert!(Shape::new(vec![2, 0, 2]).is_err());
    }

    #[test]
    fn unfold_example() {
        let s = Shape::new(vec![2, 2, 2]).unwrap();
        let t = DenseTensor::from_fn(s, |i| (4 * i[0] + 2 * i[1] + i[2]) as f64).unwrap();
        let m = t.unfold(0).unwrap();
        let row = |r: usize| (0..4).map(|c| m[(r, c)]).collect::<Vec<_>>();
        assert_eq!(row(0), vec![0.0, 2.0, 1.0, 3.0]);
        assert_eq!(row(1), vec![4.0, 6.0, 5.0, 7.0]);
        let back = DenseTensor::fold(&m, 0, t.shape()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn unfold_entries_follow_pi_k() {
        let s = Shape::new(vec![2, 3, 4]).unwrap();
        let t =
            DenseTensor::from_fn(s.clone(), |i| (i[0] + 10 * i[1] + 100 * i[2]) as f64).unwrap();
        for k in 0..3 {
            let m = t.unfold(k).unwrap();
            let mut idx = vec![0; 3];
            for off in 0..s.numel() {
                s.unravel(off, &mut idx);
                let red: Vec<usize> = (0..3).filter(|&l| l != k).map(|l| idx[l] + 1).collect();
                let j = pi_k(&s, k, &red).unwrap() - 1;
                assert_eq!(m[(idx[k], j)], t.get0(&idx));
            }
        }
    }

    #[test]
    fn zero_tensor_unfolds_to_zero() {
        let s = Shape::new(vec![3, 2, 2]).unwrap();
        let t = DenseTensor::zeros(s).unwrap();
        for k in 0..3 {
            assert!(t.unfold(k).unwrap().iter().all(|&v| v == 0.0));
        }
        let z = DMatrix::zeros(2, 6);
        let f = DenseTensor::fold(&z, 1, t.shape()).unwrap();
        assert_eq!(f, t);
    }

    #[test]
    fn fold_degenerate_mode() {
        let s = Shape::new(vec![1, 3, 2]).unwrap();
        let m = DMatrix::from_row_slice(1, 6, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let t = DenseTensor::fold(&m, 0, &s).unwrap();
        assert_eq!(t.values(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(DenseTensor::fold(&m, 1, &s).is_err());
    }

    #[test]
    fn ten2_example_and_round_trip() {
        let w = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let core = ten2(&w, 2, 2).unwrap();
        assert_eq!(
            core.slice(0),
            DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0])
        );
        assert_eq!(core.unfold2(), w);
        let z = ten2(&DMatrix::zeros(3, 6), 2, 3).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        assert!(ten2(&w, 3, 2).is_err());
    }

    #[test]
    fn inner_and_norm() {
        let s = Shape::new(vec![2, 2, 2]).unwrap();
        let ones = DenseTensor::new(s.clone(), vec![1.0; 8]).unwrap();
        assert_eq!(ones.inner(&ones).unwrap(), 8.0);
        assert!((ones.frob_norm() - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        let x = DenseTensor::from_fn(s.clone(), |i| if i[0] == 0 { 1.0 } else { 0.0 }).unwrap();
        let y = DenseTensor::from_fn(s.clone(), |i| if i[0] == 1 { 3.0 } else { 0.0 }).unwrap();
        assert_eq!(x.inner(&y).unwrap(), 0.0);
        let other = DenseTensor::zeros(Shape::new(vec![2, 2, 3]).unwrap()).unwrap();
        assert!(x.inner(&other).is_err());
    }

    #[test]
    fn inner_matches_flat_dot() {
        let s = Shape::new(vec![3, 3, 3]).unwrap();
        let x = DenseTensor::from_fn(s.clone(), |i| ((i[0] * 7 + i[1] * 3 + i[2]) as f64).sin())
            .unwrap();
        let y = DenseTensor::from_fn(s, |i| ((i[0] + 5 * i[1] + 2 * i[2]) as f64).cos()).unwrap();
        let mut flat = 0.0;
        for (a, b) in x.values().iter().zip(y.values()) {
            flat += a * b;
        }
        assert!((x.inner(&y).unwrap() - flat).abs() < 1e-14);
    }

    #[test]
    fn values_must_be_finite() {
        let s = Shape::new(vec![1, 1, 2]).unwrap();
        assert!(DenseTensor::new(s.clone(), vec![1.0, f64::NAN]).is_err());
        assert!(DenseTensor::new(s, vec![1.0]).is_err());
    }

    #[test]
    fn multi_index_conversion() {
        let s = Shape::new(vec![2, 3, 4]).unwrap();
        assert_eq!(
            MultiIndex::new(vec![2, 3, 4]).to_zero_based(&s).unwrap(),
            vec![1, 2, 3]
        );
        assert!(MultiIndex::new(vec![0, 1, 1]).to_zero_based(&s).is_err());
        assert!(MultiIndex::new(vec![1, 4, 1]).to_zero_based(&s).is_err());
        assert_eq!(MultiIndex::from_zero_based(&[0, 2, 1]).coords(), &[1, 3, 2]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn tensor_pair() -> impl Strategy<Value = (DenseTensor, DenseTensor)> {
            prop::collection::vec(1usize..=4, 3..=4).prop_flat_map(|dims| {
                let n: usize = dims.iter().product();
                let shape = Shape::new(dims).unwrap();
                (
                    prop::collection::vec(-10.0f64..10.0, n),
                    prop::collection::vec(-10.0f64..10.0, n),
                )
                    .prop_map(move |(x, y)| {
                        (
                            DenseTensor::new(shape.clone(), x).unwrap(),
                            DenseTensor::new(shape.clone(), y).unwrap(),
                        )
                    })
            })
        }

        proptest! {
            #[test]
            fn fold_inverts_unfold((t, _) in tensor_pair()) {
                for k in 0..t.shape().order() {
                    let m = t.unfold(k).unwrap();
                    let back = DenseTensor::fold(&m, k, t.shape()).unwrap();
                    prop_assert_eq!(&back, &t);
                    prop_assert_eq!(back.unfold(k).unwrap(), m);
                }
            }

            #[test]
            fn ten2_inverts_unfold2(
                n in 1usize..5, rl in 1usize..4, rr in 1usize..4, seed in 0u32..1000
            ) {
                let w = DMatrix::from_fn(n, rl * rr, |i, j| {
                    (seed as f64 * 1e-3 + (i * 31 + j * 17) as f64).sin()
                });
                prop_assert_eq!(ten2(&w, rl, rr).unwrap().unfold2(), w);
            }

            #[test]
            fn norm_is_homogeneous_and_subadditive(
                (u, v) in tensor_pair(), alpha in -5.0f64..5.0
            ) {
                let scaled = u.scaled(alpha);
                prop_assert!((scaled.frob_norm() - alpha.abs() * u.frob_norm()).abs()
                    <= 1e-12 * (1.0 + u.frob_norm()));
                let sum = u.add_scaled(1.0, &v).unwrap();
                prop_assert!(sum.frob_norm() <= u.frob_norm() + v.frob_norm() + 1e-12);
            }
        }
    }
}

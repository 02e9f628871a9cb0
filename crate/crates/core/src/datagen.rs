//! Synthetic targets: random TR tensors, normalized noise, and functions
//! sampled on a uniform grid.

use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::objective::{sample_uniform_excluding, IndexSet, SparseSample};
use crate::ring::{TrPoint, TrRank};
use crate::seed::{SeedStreams, GAMMA, NOISE, OMEGA, TRUTH, VALIDATION};
use crate::tensor::{DenseTensor, Shape};

/// A random TR point with i.i.d. `U[0, 1]` factors and its full tensor.
pub fn gen_tr_random(shape: &Shape, rank: &TrRank, seed: u64) -> Result<(TrPoint, DenseTensor)> {
    shape.guard_dense()?;
    let mut rng = SeedStreams::new(seed).stream(TRUTH);
    let p = TrPoint::random_uniform(shape.clone(), rank.clone(), 1.0, &mut rng)?;
    let t = p.tau()?;
    Ok((p, t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

/// `A_hat / ||A_hat|| + sigma E / ||E||` with standard normal `E`.
pub fn add_normalized_noise(a_hat: &DenseTensor, spec: NoiseSpec) -> Result<DenseTensor> {
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "sigma must be >= 0, got {}",
            spec.sigma
        )));
    }
    let na = a_hat.frob_norm();
    if na == 0.0 {
        return Err(Error::ZeroNorm("clean tensor"));
    }
    let clean = a_hat.scaled(1.0 / na);
    if spec.sigma == 0.0 {
        return Ok(clean);
    }
    let mut rng = SeedStreams::new(spec.seed).stream(NOISE);
    let e: Vec<f64> = (0..clean.values().len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let e = DenseTensor::new(a_hat.shape().clone(), e)?;
    let ne = e.frob_norm();
    if ne == 0.0 {
        return Err(Error::ZeroNorm("noise draw"));
    }
    clean.add_scaled(spec.sigma / ne, &e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionKind {
    /// `exp(-||x||)`
    H1,
    /// `1 / ||x||`
    H2,
}

impl FromStr for FunctionKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "h1" => Ok(FunctionKind::H1),
            "h2" => Ok(FunctionKind::H2),
            other => Err(Error::InvalidParameter(format!(
                "unknown function '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionTensorSpec {
    pub kind: FunctionKind,
    pub shape: Shape,
}

impl FunctionTensorSpec {
    pub fn new(kind: FunctionKind, shape: Shape) -> Result<Self> {
        if shape.dims().iter().any(|&n| n < 2) {
            return Err(Error::InvalidShape(format!(
                "grid extents must be >= 2, got {:?}",
                shape.dims()
            )));
        }
        Ok(FunctionTensorSpec { kind, shape })
    }

    /// `h((i_1 - 1)/(n_1 - 1), ...)` at a 0-based index; `None` where `h` is
    /// undefined (the origin for `h2`).
    pub fn value(&self, idx0: &[usize]) -> Option<f64> {
        let r = idx0
            .iter()
            .zip(self.shape.dims())
            .map(|(&i, &n)| {
                let x = i as f64 / (n - 1) as f64;
                x * x
            })
            .sum::<f64>()
            .sqrt();
        match self.kind {
            FunctionKind::H1 => Some((-r).exp()),
            FunctionKind::H2 if r == 0.0 => None,
            FunctionKind::H2 => Some(1.0 / r),
        }
    }

    /// Positions that must stay out of every sampling set.
    pub fn excluded(&self) -> Result<Option<IndexSet>> {
        match self.kind {
            FunctionKind::H1 => Ok(None),
            FunctionKind::H2 => Ok(Some(IndexSet::from_offsets(self.shape.clone(), vec![0])?)),
        }
    }

    /// Observes the function on `set`.
    pub fn observe(&self, set: &IndexSet) -> Result<SparseSample> {
        if set.shape() != &self.shape {
            return Err(Error::ShapeMismatch("index set of different shape".into()));
        }
        if let Some(ex) = self.excluded()? {
            if ex.offsets().iter().any(|&o| set.contains(o)) {
                return Err(Error::InvalidParameter(
                    "set contains the origin of h2".into(),
                ));
            }
        }
        set.observe_with(|idx| self.value(idx).unwrap_or(f64::NAN))
    }
}

/// The full grid tensor. `h2` is rejected because its origin is undefined.
pub fn gen_function_tensor(spec: &FunctionTensorSpec) -> Result<DenseTensor> {
    if spec.kind == FunctionKind::H2 {
        return Err(Error::InvalidParameter(
            "h2 is undefined at the origin; sample it with the origin excluded".into(),
        ));
    }
    DenseTensor::from_fn(spec.shape.clone(), |idx| {
        spec.value(idx).unwrap_or(f64::NAN)
    })
}

/// Factors drawn from `U[0, 1]` and scaled by `(||P_Omega A||^2 / |Omega|)^(1/(2d))`,
/// which puts the initial entries on the data's scale.
pub fn default_init<R: Rng + ?Sized>(
    data: &SparseSample,
    rank: &TrRank,
    rng: &mut R,
) -> Result<TrPoint> {
    if data.is_empty() {
        return Err(Error::EmptySet("training set"));
    }
    let d = data.shape().order();
    let ms = data.value_norm().powi(2) / data.len() as f64;
    let scale = if ms > 0.0 {
        ms.powf(1.0 / (2.0 * d as f64))
    } else {
        1.0
    };
    TrPoint::random_uniform(data.shape().clone(), rank.clone(), scale, rng)
}

/// Training set `Omega` of `omega` entries and test set `Gamma` of up to
/// `gamma` entries from its complement, both avoiding `exclude`.
pub fn split_sets(
    shape: &Shape,
    omega: usize,
    gamma: usize,
    exclude: Option<&IndexSet>,
    streams: &SeedStreams,
) -> Result<(IndexSet, Option<IndexSet>)> {
    let om = sample_uniform_excluding(shape, omega, exclude, &mut streams.stream(OMEGA))?;
    let taken = match exclude {
        Some(e) => om.union(e)?,
        None => om.clone(),
    };
    let rest = shape.numel() - taken.len();
    let g = gamma.min(rest);
    let gm = if g > 0 {
        Some(sample_uniform_excluding(
            shape,
            g,
            Some(&taken),
            &mut streams.stream(GAMMA),
        )?)
    } else {
        None
    };
    Ok((om, gm))
}

/// Holds out `floor(fraction * |data|)` samples (at least one) as a
/// validation set. Returns `(train, validation)`.
pub fn carve_validation(
    data: &SparseSample,
    fraction: f64,
    streams: &SeedStreams,
) -> Result<(SparseSample, SparseSample)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "validation fraction must be in (0, 1), got {fraction}"
        )));
    }
    let n = data.len();
    let nval = ((n as f64 * fraction).floor() as usize).max(1);
    if nval >= n {
        return Err(Error::InvalidCount {
            count: nval,
            total: n.saturating_sub(1),
        });
    }
    let picks = rand::seq::index::sample(&mut streams.stream(VALIDATION), n, nval);
    let held = IndexSet::from_offsets(
        data.shape().clone(),
        picks.iter().map(|i| data.offsets()[i]).collect(),
    )?;
    data.partition(&held)
}

/// `round(p * N)` clamped to `[1, N - excluded]`.
pub fn count_for_rate(shape: &Shape, p: f64, excluded: usize) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sampling rate must be in (0, 1], got {p}"
        )));
    }
    let avail = shape.numel() - excluded;
    Ok(((p * shape.numel() as f64).round() as usize).clamp(1, avail))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_carve_is_a_partition() {
        let shape = Shape::new(vec![6, 5, 4]).unwrap();
        let data = crate::objective::sample_uniform(&shape, 60, 1)
            .unwrap()
            .observe_with(|i| i[0] as f64)
            .unwrap();
        let st = SeedStreams::new(3);
        let (train, val) = carve_validation(&data, 0.05, &st).unwrap();
        assert_eq!((train.len(), val.len()), (57, 3));
        let merged = train.index_set().union(&val.index_set()).unwrap();
        assert_eq!(merged.offsets(), data.offsets());
        assert_eq!(carve_validation(&data, 0.05, &st).unwrap().1, val);
        assert!(carve_validation(&data, 1.0, &st).is_err());
    }
    use crate::tensor::MultiIndex;

    #[test]
    fn random_target_is_deterministic_and_consistent() {
        let shape = Shape::new(vec![3, 4, 2]).unwrap();
        let rank = TrRank::new(vec![2, 1, 2]).unwrap();
        let (p, a) = gen_tr_random(&shape, &rank, 5).unwrap();
        let (_, b) = gen_tr_random(&shape, &rank, 5).unwrap();
        assert_eq!(a, b);
        assert!(p
            .factors()
            .iter()
            .flat_map(|w| w.iter())
            .all(|&v| (0.0..=1.0).contains(&v)));
        for k in 0..3 {
            let lhs = a.unfold(k).unwrap();
            let rhs = p.factor(k) * p.subchain_naive(k).unwrap().transpose();
            assert!((&lhs - &rhs).norm() <= 1e-12 * lhs.norm());
        }
    }

    #[test]
    fn noise_has_exact_norm() {
        let shape = Shape::new(vec![4, 3, 5]).unwrap();
        let (_, a) = gen_tr_random(&shape, &TrRank::uniform(3, 2).unwrap(), 1).unwrap();
        let clean = a.scaled(1.0 / a.frob_norm());
        let z = add_normalized_noise(
            &a,
            NoiseSpec {
                sigma: 0.0,
                seed: 2,
            },
        )
        .unwrap();
        assert!((z.frob_norm() - 1.0).abs() < 1e-14);
        for sigma in [1e-6, 1e-3, 0.5] {
            let n = add_normalized_noise(&a, NoiseSpec { sigma, seed: 3 }).unwrap();
            let diff = n.add_scaled(-1.0, &clean).unwrap().frob_norm();
            assert!(
                (diff - sigma).abs() <= 1e-14 * sigma.max(1.0) + 1e-15,
                "{diff} vs {sigma}"
            );
        }
        let zero = DenseTensor::zeros(shape).unwrap();
        assert!(matches!(
            add_normalized_noise(
                &zero,
                NoiseSpec {
                    sigma: 1.0,
                    seed: 0
                }
            ),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn function_grid_values() {
        let shape = Shape::new(vec![20, 20, 20, 20]).unwrap();
        let h1 = FunctionTensorSpec::new(FunctionKind::H1, shape.clone()).unwrap();
        let h2 = FunctionTensorSpec::new(FunctionKind::H2, shape.clone()).unwrap();
        let corner = MultiIndex::new(vec![20; 4]).to_zero_based(&shape).unwrap();
        assert_eq!(h1.value(&[0; 4]), Some(1.0));
        assert!((h1.value(&corner).unwrap() - 0.1353352832366127).abs() < 1e-15);
        assert_eq!(h2.value(&corner), Some(0.5));
        assert_eq!(h2.value(&[0; 4]), None);
        assert!(gen_function_tensor(&h2).is_err());
        assert!(
            FunctionTensorSpec::new(FunctionKind::H1, Shape::new(vec![1, 3, 3]).unwrap()).is_err()
        );
        let small =
            FunctionTensorSpec::new(FunctionKind::H1, Shape::new(vec![3, 3, 3]).unwrap()).unwrap();
        let t = gen_function_tensor(&small).unwrap();
        assert!(t.values().iter().all(|&v| v > 0.0 && v <= 1.0));
        assert!((t.get0(&[2, 2, 2]) - (-(3f64).sqrt()).exp()).abs() < 1e-15);
    }

    #[test]
    fn h2_sets_avoid_the_origin() {
        let shape = Shape::new(vec![3, 3, 3]).unwrap();
        let spec = FunctionTensorSpec::new(FunctionKind::H2, shape.clone()).unwrap();
        let ex = spec.excluded().unwrap().unwrap();
        for seed in 0..20 {
            let (om, gm) = split_sets(&shape, 20, 100, Some(&ex), &SeedStreams::new(seed)).unwrap();
            let gm = gm.unwrap();
            assert_eq!(gm.len(), 6);
            assert!(!om.contains(0) && !gm.contains(0));
            assert!(om.offsets().iter().all(|&o| !gm.contains(o)));
            let obs = spec.observe(&om).unwrap();
            assert!(obs.values().iter().all(|v| v.is_finite()));
        }
        let bad = IndexSet::from_offsets(shape, vec![0, 1]).unwrap();
        assert!(spec.observe(&bad).is_err());
    }

    #[test]
    fn init_matches_data_scale() {
        use rand::SeedableRng;
        let shape = Shape::new(vec![10, 10, 10]).unwrap();
        let set = crate::objective::sample_uniform(&shape, 300, 1).unwrap();
        let data = set.observe_with(|_| 64.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let p = default_init(&data, &TrRank::uniform(3, 1).unwrap(), &mut rng).unwrap();
        // scale = 64^(1/3) = 4
        assert!(p
            .factors()
            .iter()
            .flat_map(|w| w.iter())
            .all(|&v| (0.0..=4.0 + 1e-12).contains(&v)));
        assert_eq!(count_for_rate(&shape, 0.3, 0).unwrap(), 300);
    }
}

//! Error measures and the recovery phase sweep.

use rayon::prelude::*;

use crate::datagen::{default_init, gen_tr_random, split_sets};
use crate::error::{Error, Result};
use crate::objective::{entries_at, SparseSample};
use crate::ring::{TrPoint, TrRank};
use crate::seed::{SeedStreams, INIT};
use crate::solvers::{solve, SolverConfig};
use crate::tensor::{DenseTensor, Shape};

/// `||P_S(tau(W)) - P_S(A)||_F / ||P_S(A)||_F` over the positions of `set`.
pub fn rel_error_on(set: &SparseSample, p: &TrPoint) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptySet("evaluation set"));
    }
    set.check_point(p)?;
    let den = set.value_norm();
    if den == 0.0 {
        return Err(Error::ZeroNorm("observed values"));
    }
    let e = entries_at(p, set);
    let num: f64 = e
        .iter()
        .zip(set.values())
        .map(|(x, a)| (x - a) * (x - a))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

fn same_shape(x: &DenseTensor, a: &DenseTensor) -> Result<()> {
    if x.shape() != a.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.shape().dims(),
            a.shape().dims()
        )));
    }
    Ok(())
}

/// `||X - A||_F^2 / N`.
pub fn mse(x: &DenseTensor, a: &DenseTensor) -> Result<f64> {
    same_shape(x, a)?;
    let s: f64 = x
        .values()
        .iter()
        .zip(a.values())
        .map(|(u, v)| (u - v) * (u - v))
        .sum();
    Ok(s / x.values().len() as f64)
}

/// `||X - A||_F / ||A||_F`.
pub fn relerr(x: &DenseTensor, a: &DenseTensor) -> Result<f64> {
    same_shape(x, a)?;
    let na = a.frob_norm();
    if na == 0.0 {
        return Err(Error::ZeroNorm("reference tensor"));
    }
    Ok(x.add_scaled(-1.0, a)?.frob_norm() / na)
}

/// `10 log10(max(A)^2 / MSE)`; `+inf` when the tensors agree.
pub fn psnr(x: &DenseTensor, a: &DenseTensor) -> Result<f64> {
    let m = mse(x, a)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (a.max().powi(2) / m).log10())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSweepSpec {
    pub order: usize,
    pub extents: Vec<usize>,
    pub sample_sizes: Vec<usize>,
    pub rank: usize,
    pub trials: usize,
    pub test_size: usize,
    pub success_tol: f64,
    pub seed: u64,
    pub solver: SolverConfig,
}

impl PhaseSweepSpec {
    pub fn new(
        extents: Vec<usize>,
        sample_sizes: Vec<usize>,
        rank: usize,
        solver: SolverConfig,
    ) -> Self {
        PhaseSweepSpec {
            order: 3,
            extents,
            sample_sizes,
            rank,
            trials: 5,
            test_size: 100,
            success_tol: 1e-4,
            seed: 0,
            solver,
        }
    }
}

/// Success counts `counts[a][b]` for extent `a` and sample size `b`. A trial
/// succeeds when the test error drops below `success_tol` within the solver's
/// iteration cap. Sample sizes are capped at the tensor size; with nothing
/// left to test on, the training error decides.
pub fn phase_sweep(spec: &PhaseSweepSpec) -> Result<Vec<Vec<usize>>> {
    let root = SeedStreams::new(spec.seed);
    let cells: Vec<(usize, usize)> = (0..spec.extents.len())
        .flat_map(|a| (0..spec.sample_sizes.len()).map(move |b| (a, b)))
        .collect();
    let results: Vec<Result<usize>> = cells
        .par_iter()
        .map(|&(a, b)| {
            let n = spec.extents[a];
            let shape = Shape::new(vec![n; spec.order])?;
            let rank = TrRank::uniform(spec.order, spec.rank)?;
            let count = spec.sample_sizes[b].min(shape.numel());
            let mut ok = 0;
            for trial in 0..spec.trials {
                let cell = root.child("phase", (a * 1_000 + b) as u64 * 1_000 + trial as u64);
                if phase_trial(&shape, &rank, count, spec, &cell)? {
                    ok += 1;
                }
            }
            Ok(ok)
        })
        .collect();
    let mut out = vec![vec![0; spec.sample_sizes.len()]; spec.extents.len()];
    for (&(a, b), r) in cells.iter().zip(results) {
        out[a][b] = r?;
    }
    Ok(out)
}

fn phase_trial(
    shape: &Shape,
    rank: &TrRank,
    count: usize,
    spec: &PhaseSweepSpec,
    streams: &SeedStreams,
) -> Result<bool> {
    let (_, truth) = gen_tr_random(shape, rank, streams.master())?;
    let (om, gm) = split_sets(shape, count, spec.test_size, None, streams)?;
    let data = om.observe(&truth)?;
    let test = gm.map(|g| g.observe(&truth)).transpose()?;
    let init = default_init(&data, rank, &mut streams.stream(INIT))?;
    let (p, rec) = solve(&init, &data, test.as_ref(), &spec.solver)?;
    let err = match &test {
        Some(t) => rel_error_on(t, &p)?,
        None => rec.last().eps_omega,
    };
    Ok(err < spec.success_tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::test_support::*;

    #[test]
    fn rel_error_examples() {
        let p = random_point(&[3, 4, 3], &[2, 2, 2], 1);
        let t = p.tau().unwrap();
        let set = crate::objective::sample_uniform(p.shape(), 15, 2).unwrap();
        let exact = set.observe(&t).unwrap();
        assert!(rel_error_on(&exact, &p).unwrap() < 1e-15);
        let z = TrPoint::zeros(p.shape().clone(), p.rank().clone()).unwrap();
        assert!((rel_error_on(&exact, &z).unwrap() - 1.0).abs() < 1e-15);
        let shifted = exact
            .with_values(exact.values().iter().map(|v| v + 0.3).collect())
            .unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for s in 0..shifted.len() {
            let a = shifted.values()[s];
            let x = t.values()[shifted.offsets()[s]];
            num += (x - a) * (x - a);
            den += a * a;
        }
        let want = (num / den).sqrt();
        assert!((rel_error_on(&shifted, &p).unwrap() - want).abs() < 1e-13 * want);
        let zeros = exact.with_values(vec![0.0; 15]).unwrap();
        assert!(matches!(rel_error_on(&zeros, &p), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn image_metrics() {
        let shape = Shape::new(vec![4, 4, 3]).unwrap();
        let a = DenseTensor::from_fn(shape.clone(), |i| {
            if i == [0, 0, 0] {
                1.0
            } else {
                (i[0] + i[1] + i[2]) as f64 / 10.0
            }
        })
        .unwrap();
        assert_eq!(relerr(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let x = DenseTensor::from_fn(shape.clone(), |i| a.get0(i) + 0.1).unwrap();
        assert!((mse(&x, &a).unwrap() - 0.01).abs() < 1e-15);
        assert!((psnr(&x, &a).unwrap() - 20.0).abs() < 1e-12);
        // flat oracle
        let y = DenseTensor::from_fn(shape.clone(), |i| {
            ((i[0] * 7 + i[1] * 3 + i[2]) as f64).sin()
        })
        .unwrap();
        let flat: f64 = y
            .values()
            .iter()
            .zip(a.values())
            .map(|(u, v)| (u - v).powi(2))
            .sum();
        let m = flat / 48.0;
        assert!((mse(&y, &a).unwrap() - m).abs() <= 1e-12 * m);
        let amax = a.values().iter().cloned().fold(f64::MIN, f64::max);
        assert!((psnr(&y, &a).unwrap() - 10.0 * (amax * amax / m).log10()).abs() < 1e-12);
        let na: f64 = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((relerr(&y, &a).unwrap() - (flat.sqrt() / na)).abs() < 1e-12);
        let other = DenseTensor::zeros(Shape::new(vec![4, 4, 4]).unwrap()).unwrap();
        assert!(mse(&other, &a).is_err());
    }
}

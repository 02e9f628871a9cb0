// Small column-major kernels for slice-sized matrices (a handful of rows and
// columns). Allocation-free so the per-sample loops stay cheap.

/// `out = a * b` with `a` of size `m x k` and `b` of size `k x n`.
#[inline]
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && out.len() >= m * n);
    for j in 0..n {
        let col = &mut out[j * m..(j + 1) * m];
        col.fill(0.0);
        for l in 0..k {
            let blj = b[l + j * k];
            if blj == 0.0 {
                continue;
            }
            let acol = &a[l * m..(l + 1) * m];
            for (o, &x) in col.iter_mut().zip(acol) {
                *o += x * blj;
            }
        }
    }
}

/// `tr(a * b)` with `a` of size `m x k` and `b` of size `k x m`.
#[inline]
pub(crate) fn trace_of_product(a: &[f64], b: &[f64], m: usize, k: usize) -> f64 {
    let mut t = 0.0;
    for i in 0..m {
        for l in 0..k {
            t += a[i + l * m] * b[l + i * k];
        }
    }
    t
}

/// Writes `vec(p^T)` for `p` of size `rows x cols` (so `out[a + cols*b] = p[b, a]`).
#[inline]
pub(crate) fn vec_transpose(p: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for b in 0..rows {
        for a in 0..cols {
            out[a + cols * b] = p[b + rows * a];
        }
    }
}

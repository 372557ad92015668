//! Minimal dense linear algebra for the tiny symmetric systems the factor
//! solvers produce (rank x rank, typically 20x20).

/// Dot product of two equal-length slices.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place Cholesky factorization of a row-major symmetric matrix.
/// Returns false if the matrix is not numerically positive definite.
fn cholesky(a: &mut [f64], dim: usize) -> bool {
    for j in 0..dim {
        let mut d = a[j * dim + j];
        for k in 0..j {
            d -= a[j * dim + k] * a[j * dim + k];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * dim + j] = d;
        for i in j + 1..dim {
            let mut s = a[i * dim + j];
            for k in 0..j {
                s -= a[i * dim + k] * a[j * dim + k];
            }
            a[i * dim + j] = s / d;
        }
    }
    true
}

/// Solves `L L^T x = b` given the Cholesky factor in the lower triangle.
fn cholesky_solve(l: &[f64], b: &mut [f64], dim: usize) {
    for i in 0..dim {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * dim + k] * b[k];
        }
        b[i] = s / l[i * dim + i];
    }
    for i in (0..dim).rev() {
        let mut s = b[i];
        for k in i + 1..dim {
            s -= l[k * dim + i] * b[k];
        }
        b[i] = s / l[i * dim + i];
    }
}

/// Solves the symmetric positive semidefinite system `a x = b`.
///
/// Gram matrices can be singular when regularization is zero and the data is
/// degenerate; in that case a ridge jitter starting at 1e-10 is added to the
/// diagonal and escalated until the factorization succeeds.
pub(crate) fn solve_spd(a: &[f64], b: &[f64], dim: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), dim * dim);
    debug_assert_eq!(b.len(), dim);
    let mut factor = a.to_vec();
    if cholesky(&mut factor, dim) {
        let mut x = b.to_vec();
        cholesky_solve(&factor, &mut x, dim);
        return x;
    }
    let mut jitter = 1e-10;
    loop {
        factor.copy_from_slice(a);
        for i in 0..dim {
            factor[i * dim + i] += jitter;
        }
        if cholesky(&mut factor, dim) {
            let mut x = b.to_vec();
            cholesky_solve(&factor, &mut x, dim);
            return x;
        }
        jitter *= 100.0;
        if jitter > 1e6 {
            // Gram matrices are PSD, so a large enough ridge always succeeds;
            // reaching this point means the inputs were not finite.
            return vec![0.0; dim];
        }
    }
}

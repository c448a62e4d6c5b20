//! Small dense helpers on row-major `n x n` slices.
//!
//! The correlation recursion works with tiny matrices (N is a handful of
//! assets) evaluated thousands of times per likelihood call, so these avoid
//! allocation-heavy generic containers in the hot loop.

use nalgebra::{DMatrix, SymmetricEigen};

/// In-place lower Cholesky factor of a symmetric matrix. Returns `false` if a
/// non-positive pivot is met, leaving `a` partially overwritten.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    debug_assert_eq!(a.len(), n * n);
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for k in (j + 1)..n {
            a[j * n + k] = 0.0;
        }
    }
    true
}

/// Given a lower Cholesky factor `l` of `M`, returns `(ln det M, x' M^-1 x)`.
pub fn logdet_and_quad(l: &[f64], n: usize, x: &[f64], work: &mut [f64]) -> (f64, f64) {
    let mut logdet = 0.0;
    let mut quad = 0.0;
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * n + k] * work[k];
        }
        let d = l[i * n + i];
        work[i] = s / d;
        logdet += d.ln();
        quad += work[i] * work[i];
    }
    (2.0 * logdet, quad)
}

pub fn to_dmatrix(a: &[f64], n: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, a)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Whether a Cholesky factorization of `m` succeeds.
pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    let mut buf: Vec<f64> = (0..n * n).map(|k| m[(k / n, k % n)]).collect();
    cholesky_in_place(&mut buf, n)
}

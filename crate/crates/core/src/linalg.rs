//! Small dense helpers: Cholesky factorization and SPD solves for the
//! vector-wise ALS baseline.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for symmetric positive-definite `A` (row-major k x k)
/// via an in-place Cholesky factorization of a copy of `A`.
pub fn spd_solve(a: &[f64], b: &[f64], k: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), k * k);
    debug_assert_eq!(b.len(), k);
    let mut l = a.to_vec();
    // lower-triangular Cholesky, L stored in the lower part of `l`
    for j in 0..k {
        let mut diag = l[j * k + j];
        for p in 0..j {
            diag -= l[j * k + p] * l[j * k + p];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::Numerical(format!(
                "matrix not positive definite (pivot {diag:e} at column {j})"
            )));
        }
        let diag = diag.sqrt();
        l[j * k + j] = diag;
        for i in (j + 1)..k {
            let mut v = l[i * k + j];
            for p in 0..j {
                v -= l[i * k + p] * l[j * k + p];
            }
            l[i * k + j] = v / diag;
        }
    }
    // forward solve L y = b
    let mut y = b.to_vec();
    for i in 0..k {
        for p in 0..i {
            y[i] -= l[i * k + p] * y[p];
        }
        y[i] /= l[i * k + i];
    }
    // backward solve L^T x = y
    let mut x = y;
    for i in (0..k).rev() {
        for p in (i + 1)..k {
            x[i] -= l[p * k + i] * x[p];
        }
        x[i] /= l[i * k + i];
    }
    Ok(x)
}

//! Fixed-iteration Moore-Penrose pseudo-inverse.
//!
//! Uses the seventh-order hyperpower recurrence
//!
//! ```text
//! Z_0     = G^T / (|G|_1 |G|_inf)
//! Z_{k+1} = 1/4 Z_k (13 I - G Z_k (15 I - G Z_k (7 I - G Z_k)))
//! ```
//!
//! Each iteration costs four `m x m` products, i.e. `24 m^3` multiply-adds for the
//! default six iterations. The scaling of `Z_0` keeps every singular value of
//! `G Z_0` inside `(0, 1]`, which is the convergence region of the recurrence.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Iteration count used when callers do not override it.
pub const DEFAULT_PINV_ITERS: usize = 6;

/// Relative residual above which the result is rejected.
pub const CONVERGENCE_BOUND: f64 = 1e-3;

/// Approximate pseudo-inverse of the square matrix `g`.
///
/// Fails with [`Error::Convergence`] when `|g Z g - g|_F / |g|_F` exceeds
/// [`CONVERGENCE_BOUND`] after `iterations` steps.
pub fn pinv_iterative(g: &Matrix, iterations: usize) -> Result<Matrix> {
    let (m, cols) = g.shape();
    if m != cols {
        return Err(Error::DimensionMismatch {
            op: "pinv_iterative",
            expected: (m, m),
            found: (m, cols),
        });
    }
    if iterations == 0 {
        return Err(Error::InvalidArgument(
            "pinv_iterative: iterations must be >= 1",
        ));
    }
    let scale = g.max_abs_col_sum() * g.max_abs_row_sum();
    if scale == 0.0 {
        // pinv(0) = 0
        return Ok(Matrix::zeros(m, m));
    }
    let mut z = g.transpose().scale(1.0 / scale);
    for _ in 0..iterations {
        let gz = g.matmul(&z)?;
        let inner = gz.matmul(&gz.shifted_neg(7.0))?;
        let mid = gz.matmul(&inner.shifted_neg(15.0))?;
        z = z.matmul(&mid.shifted_neg(13.0))?.scale(0.25);
    }
    if !z.is_finite() {
        return Err(Error::Overflow {
            op: "pinv_iterative",
        });
    }
    let residual = pinv_residual(g, &z)?;
    if !(residual <= CONVERGENCE_BOUND) {
        return Err(Error::Convergence {
            residual,
            iterations,
        });
    }
    Ok(z)
}

/// `|g z g - g|_F / |g|_F`.
pub fn pinv_residual(g: &Matrix, z: &Matrix) -> Result<f64> {
    let gzg = g.matmul(z)?.matmul(g)?;
    let norm = g.frobenius_norm();
    let diff = gzg.sub(g)?.frobenius_norm();
    Ok(if norm > 0.0 { diff / norm } else { diff })
}

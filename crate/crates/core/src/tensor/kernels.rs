//! The unnormalized softmax kernel and its row-sum normalizer.
//!
//! `rho(P, O) = exp(P O^T / sqrt(d))` is the softmax numerator and `phi(A) = A 1^T`
//! its denominator; a softmax is recovered as `row_scale(rho, phi(rho))`. No
//! max-subtraction is performed anywhere: a continual cache cannot be rebased when
//! the window maximum moves, so overflow is reported instead of hidden.

use alloc::vec::Vec;

use super::matrix::{dot, Matrix};
use crate::error::{Error, Result};

/// Single kernel entry `exp(<q, k> / sqrt(d))`.
#[inline]
pub fn kernel(q: &[f64], k: &[f64], sqrt_d: f64) -> Result<f64> {
    let v = libm::exp(dot(q, k) / sqrt_d);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Overflow { op: "rho" })
    }
}

#[inline]
pub(crate) fn sqrt_dim(d: usize) -> f64 {
    libm::sqrt(d as f64)
}

/// `rho(q, Omega)` for a single query row, written into `out` (one entry per row of `omega`).
pub fn rho_row_into(q: &[f64], omega: &Matrix, out: &mut [f64]) -> Result<()> {
    let sqrt_d = sqrt_dim(q.len());
    for (o, k) in out.iter_mut().zip(omega.row_iter()) {
        *o = kernel(q, k, sqrt_d)?;
    }
    Ok(())
}

pub fn rho_row(q: &[f64], omega: &Matrix) -> Result<Vec<f64>> {
    let mut out = alloc::vec![0.0; omega.rows()];
    rho_row_into(q, omega, &mut out)?;
    Ok(out)
}

/// `rho(Psi, Omega) = exp(Psi Omega^T / sqrt(d))`, with `d` the shared column count.
pub fn rho(psi: &Matrix, omega: &Matrix) -> Result<Matrix> {
    if psi.cols() != omega.cols() {
        return Err(Error::DimensionMismatch {
            op: "rho",
            expected: (psi.rows(), psi.cols()),
            found: omega.shape(),
        });
    }
    if psi.cols() == 0 {
        return Err(Error::InvalidArgument(
            "rho: token dimension must be at least 1",
        ));
    }
    let mut out = Matrix::zeros(psi.rows(), omega.rows());
    for i in 0..psi.rows() {
        rho_row_into(psi.row(i), omega, out.row_mut(i))?;
    }
    Ok(out)
}

/// Row sums.
pub fn phi(a: &Matrix) -> Vec<f64> {
    a.row_iter().map(|r| r.iter().sum()).collect()
}

/// Divides row `i` of `a` by `s[i]`.
pub fn row_scale(a: &Matrix, s: &[f64]) -> Result<Matrix> {
    if s.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            op: "row_scale",
            expected: (a.rows(), 1),
            found: (s.len(), 1),
        });
    }
    let mut out = a.clone();
    for (i, &si) in s.iter().enumerate() {
        if si == 0.0 {
            return Err(Error::DivisionByZero {
                op: "row_scale",
                index: i,
            });
        }
        for x in out.row_mut(i) {
            *x /= si;
        }
    }
    if !out.is_finite() {
        return Err(Error::Overflow { op: "row_scale" });
    }
    Ok(out)
}

/// Row-stochastic normalization `phi(A)^{-1} (.) A` of a kernel block.
pub fn normalized(a: &Matrix) -> Result<Matrix> {
    row_scale(a, &phi(a))
}

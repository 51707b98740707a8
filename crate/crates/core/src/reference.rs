//! Batch (non-continual) attention over a full window.
//!
//! These evaluate every product from scratch and serve as the ground truth the
//! continual states are checked against.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{axpy, normalized, phi, pinv_iterative, rho, rho_row_into, row_scale, Matrix};

/// Already-projected query, key and value tokens of one window.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttentionInput {
    pub q: Matrix,
    pub k: Matrix,
    pub v: Matrix,
}

impl AttentionInput {
    pub fn new(q: Matrix, k: Matrix, v: Matrix) -> Result<Self> {
        let input = Self { q, k, v };
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.q.shape();
        for other in [&self.k, &self.v] {
            if other.shape() != shape {
                return Err(Error::DimensionMismatch {
                    op: "AttentionInput",
                    expected: shape,
                    found: other.shape(),
                });
            }
        }
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::InvalidArgument(
                "attention input needs n >= 1 and d >= 1",
            ));
        }
        Ok(())
    }

    /// Window length.
    pub fn n(&self) -> usize {
        self.q.rows()
    }

    /// Token dimension.
    pub fn d(&self) -> usize {
        self.q.cols()
    }
}

/// Exact `softmax(Q K^T / sqrt d) V`, one query row at a time so the `n x n`
/// score matrix is never materialized.
pub fn sda_exact(input: &AttentionInput) -> Result<Matrix> {
    input.validate()?;
    let (n, d) = (input.n(), input.d());
    let mut out = Matrix::zeros(n, d);
    let mut scores = alloc::vec![0.0; n];
    for i in 0..n {
        rho_row_into(input.q.row(i), &input.k, &mut scores)?;
        let denom: f64 = scores.iter().sum();
        if denom == 0.0 {
            return Err(Error::DivisionByZero {
                op: "sda_exact",
                index: i,
            });
        }
        let row = out.row_mut(i);
        for (j, &a) in scores.iter().enumerate() {
            axpy(row, a, input.v.row(j));
        }
        for x in row.iter_mut() {
            *x /= denom;
        }
    }
    if !out.is_finite() {
        return Err(Error::Overflow { op: "sda_exact" });
    }
    Ok(out)
}

/// Nystrom approximation `B_phi (Gamma_phi)^+ Delta_phi V` with the supplied landmarks.
///
/// Evaluated as `(B_phi Gamma_phi^+) (phi(Delta)^{-1} (.) Delta V)`, the same grouping the
/// continual states use.
pub fn sda_nystrom(
    input: &AttentionInput,
    q_land: &Matrix,
    k_land: &Matrix,
    pinv_iters: usize,
) -> Result<Matrix> {
    input.validate()?;
    let (n, d) = (input.n(), input.d());
    let m = q_land.rows();
    if q_land.shape() != (m, d) || k_land.shape() != (m, d) {
        return Err(Error::DimensionMismatch {
            op: "sda_nystrom landmarks",
            expected: (m, d),
            found: k_land.shape(),
        });
    }
    if m == 0 || m > n {
        return Err(Error::InvalidArgument("sda_nystrom needs 1 <= m <= n"));
    }
    let b_phi = normalized(&rho(&input.q, k_land)?)?;
    let gamma_phi = normalized(&rho(q_land, k_land)?)?;
    let gamma_pinv = pinv_iterative(&gamma_phi, pinv_iters)?;
    let delta = rho(q_land, &input.k)?;
    let delta_v = delta.matmul(&input.v)?;
    let attended_values = row_scale(&delta_v, &phi(&delta))?;
    let out = b_phi.matmul(&gamma_pinv)?.matmul(&attended_values)?;
    if !out.is_finite() {
        return Err(Error::Overflow { op: "sda_nystrom" });
    }
    Ok(out)
}

/// Sizes of the `m` contiguous segments covering `n` tokens; the first `n mod m`
/// segments carry the extra token.
pub fn segment_sizes(n: usize, m: usize) -> Result<Vec<usize>> {
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(
            "segment count must satisfy 1 <= m <= n",
        ));
    }
    let (base, extra) = (n / m, n % m);
    Ok((0..m).map(|i| base + usize::from(i < extra)).collect())
}

/// Per-segment mean rows of `tokens`, in segment order.
pub fn segment_means(tokens: &Matrix, m: usize) -> Result<Matrix> {
    let sizes = segment_sizes(tokens.rows(), m)?;
    let d = tokens.cols();
    let mut out = Matrix::zeros(m, d);
    let mut start = 0;
    for (s, &size) in sizes.iter().enumerate() {
        let row = out.row_mut(s);
        for t in start..start + size {
            axpy(row, 1.0, tokens.row(t));
        }
        for x in row.iter_mut() {
            *x /= size as f64;
        }
        start += size;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn input(q: &[[f64; 2]], k: &[[f64; 2]], v: &[[f64; 2]]) -> AttentionInput {
        AttentionInput::new(
            Matrix::from_rows(q).unwrap(),
            Matrix::from_rows(k).unwrap(),
            Matrix::from_rows(v).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_token_returns_its_value() {
        let x = input(&[[0.3, -2.0]], &[[1.5, 0.2]], &[[7.0, -3.0]]);
        assert_eq!(sda_exact(&x).unwrap().as_slice(), &[7.0, -3.0]);
    }

    #[test]
    fn zero_values_give_zero_output() {
        let x = input(
            &[[1.0, 2.0], [0.0, 1.0]],
            &[[0.5, 0.5], [1.0, -1.0]],
            &[[0.0; 2]; 2],
        );
        assert!(sda_exact(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let q = Matrix::zeros(2, 2);
        let k = Matrix::zeros(3, 2);
        assert!(AttentionInput::new(q.clone(), k, q).is_err());
        assert!(AttentionInput::new(
            Matrix::zeros(0, 2),
            Matrix::zeros(0, 2),
            Matrix::zeros(0, 2)
        )
        .is_err());
    }

    #[test]
    fn segment_sizes_uneven() {
        assert_eq!(segment_sizes(7, 3).unwrap(), vec![3, 2, 2]);
        assert_eq!(segment_sizes(20, 4).unwrap(), vec![5; 4]);
        assert!(segment_sizes(3, 4).is_err());
        assert!(segment_sizes(3, 0).is_err());
    }

    #[test]
    fn segment_means_examples() {
        let t = Matrix::from_fn(7, 2, |i, j| (i * 10 + j) as f64);
        let s = segment_means(&t, 3).unwrap();
        // segments {0,1,2}, {3,4}, {5,6}
        assert_eq!(s.as_slice(), &[10.0, 11.0, 35.0, 36.0, 55.0, 56.0]);

        let same = segment_means(&t, 7).unwrap();
        assert_eq!(same, t);

        let t20 = Matrix::from_fn(20, 1, |i, _| i as f64);
        let s20 = segment_means(&t20, 4).unwrap();
        assert_eq!(s20.as_slice(), &[2.0, 7.0, 12.0, 17.0]);

        assert!(matches!(
            segment_means(&t, 8),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn nystrom_rejects_bad_landmarks() {
        let x = input(&[[1.0, 0.0]], &[[1.0, 0.0]], &[[1.0, 0.0]]);
        let two = Matrix::zeros(2, 2);
        assert!(sda_nystrom(&x, &two, &two, 6).is_err());
        let wrong_d = Matrix::zeros(1, 3);
        assert!(sda_nystrom(&x, &wrong_d, &wrong_d, 6).is_err());
    }
}

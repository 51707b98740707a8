#![allow(dead_code)]

use conystrom_core::{AttentionInput, Matrix};
use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut StdRng, rows: usize, cols: usize, amp: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-amp..=amp))
}

pub fn uniform_row(rng: &mut StdRng, d: usize, amp: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-amp..=amp)).collect()
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn from_na(m: &DMatrix<f64>) -> Matrix {
    Matrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// SVD-based Moore-Penrose pseudo-inverse.
pub fn svd_pinv(g: &Matrix) -> Matrix {
    let svd = to_na(g).svd(true, true);
    from_na(&svd.pseudo_inverse(1e-13).expect("svd pinv"))
}

/// Stable softmax of each row (max-subtracted).
pub fn stable_softmax_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.apply(|v| *v = (*v - max).exp());
        let s: f64 = row.iter().sum();
        row.apply(|v| *v /= s);
    }
    out
}

/// softmax(Q K^T / sqrt d) V with max-subtraction, via nalgebra.
pub fn stable_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
    let d = q.cols() as f64;
    let scores = to_na(q) * to_na(k).transpose() / d.sqrt();
    from_na(&(stable_softmax_rows(&scores) * to_na(v)))
}

/// Direct three-factor Nystrom evaluation with an SVD pseudo-inverse.
pub fn nystrom_svd(q: &Matrix, k: &Matrix, v: &Matrix, ql: &Matrix, kl: &Matrix) -> Matrix {
    let d = (q.cols() as f64).sqrt();
    let (q, k, v, ql, kl) = (to_na(q), to_na(k), to_na(v), to_na(ql), to_na(kl));
    let b = stable_softmax_rows(&(&q * kl.transpose() / d));
    let g = stable_softmax_rows(&(&ql * kl.transpose() / d));
    let dl = stable_softmax_rows(&(&ql * k.transpose() / d));
    let gp = g.svd(true, true).pseudo_inverse(1e-13).unwrap();
    from_na(&(b * gp * dl * v))
}

pub fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    conystrom_core::tensor::rel_frobenius_error(a, b).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Plain sliding window kept alongside a continual state.
pub struct SlidingWindow {
    pub x: AttentionInput,
}

impl SlidingWindow {
    pub fn new(x: AttentionInput) -> Self {
        Self { x }
    }

    pub fn push(&mut self, q: &[f64], k: &[f64], v: &[f64]) {
        let shift = |m: &Matrix, row: &[f64]| {
            let (n, d) = m.shape();
            let mut data = m.as_slice()[d..].to_vec();
            data.extend_from_slice(row);
            Matrix::new(n, d, data).unwrap()
        };
        self.x = AttentionInput::new(shift(&self.x.q, q), shift(&self.x.k, k), shift(&self.x.v, v)).unwrap();
    }
}

/// `n x d` uniform tokens for q, k and v.
pub fn uniform_input(rng: &mut StdRng, n: usize, d: usize, amp: f64) -> AttentionInput {
    AttentionInput::new(uniform(rng, n, d, amp), uniform(rng, n, d, amp), uniform(rng, n, d, amp)).unwrap()
}

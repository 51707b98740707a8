//! Lloyd's k-means for fixed landmarks, plus seeded token subsampling.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{axpy, Matrix};

/// Outcome of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centers: Matrix,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after every Lloyd iteration.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

/// Indices of the `m` distinct tokens used as initial centers.
pub fn init_indices(count: usize, m: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    index::sample(&mut rng, count, m).into_vec()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.row_iter().enumerate() {
        let dist = sq_dist(point, center);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

/// Lloyd's algorithm seeded with `m` distinct uniformly sampled tokens.
///
/// Stops when assignments no longer change or after `max_iters` iterations. An
/// empty cluster is moved onto the token farthest from its current center.
pub fn kmeans(tokens: &Matrix, m: usize, seed: u64, max_iters: usize) -> Result<KMeansFit> {
    let (count, d) = tokens.shape();
    if m == 0 || m > count {
        return Err(Error::InvalidArgument(
            "k-means needs 1 <= m <= number of tokens",
        ));
    }
    let mut centers = Matrix::zeros(m, d);
    for (c, &i) in init_indices(count, m, seed).iter().enumerate() {
        centers.row_mut(c).copy_from_slice(tokens.row(i));
    }

    let mut assignments = vec![usize::MAX; count];
    let mut dists = vec![0.0; count];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut changed = false;
        for (i, point) in tokens.row_iter().enumerate() {
            let (c, dist) = nearest(point, &centers);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            dists[i] = dist;
        }

        let mut sums = Matrix::zeros(m, d);
        let mut sizes = vec![0usize; m];
        for (i, &c) in assignments.iter().enumerate() {
            axpy(sums.row_mut(c), 1.0, tokens.row(i));
            sizes[c] += 1;
        }
        for c in 0..m {
            if sizes[c] == 0 {
                continue;
            }
            let len = sizes[c] as f64;
            for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s / len;
            }
        }
        let wcss = tokens
            .row_iter()
            .zip(&assignments)
            .map(|(p, &c)| sq_dist(p, centers.row(c)))
            .sum();
        inertia.push(wcss);

        for c in 0..m {
            if sizes[c] > 0 {
                continue;
            }
            // farthest token from its own center; claimed tokens are zeroed so two
            // empty clusters do not land on the same point
            let far = (0..count)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            if centers.row(c) != tokens.row(far) {
                centers.row_mut(c).copy_from_slice(tokens.row(far));
                changed = true;
            }
            dists[far] = 0.0;
        }

        if !changed {
            break;
        }
    }
    Ok(KMeansFit {
        centers,
        assignments,
        inertia,
        iterations,
    })
}

/// Cluster centers of `tokens`, usable as a fixed landmark matrix.
pub fn kmeans_landmarks(tokens: &Matrix, m: usize, seed: u64, max_iters: usize) -> Result<Matrix> {
    Ok(kmeans(tokens, m, seed, max_iters)?.centers)
}

/// Uniform sample of at most `cap` rows without replacement, kept in original order.
pub fn subsample_tokens(tokens: &Matrix, cap: usize, seed: u64) -> Matrix {
    let count = tokens.rows();
    if count <= cap {
        return tokens.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, count, cap).into_vec();
    picked.sort_unstable();
    let mut out = Matrix::zeros(cap, tokens.cols());
    for (dst, &src) in picked.iter().enumerate() {
        out.row_mut(dst).copy_from_slice(tokens.row(src));
    }
    out
}

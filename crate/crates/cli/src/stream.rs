use conystrom_core::{AttentionInput, Matrix};
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

/// Seeded synthetic token stream with entries uniform in `[-1, 1]`.
///
/// Unit-range entries keep `|q . k| / sqrt(d)` at most `sqrt(d)`, far from
/// exponential overflow for any practical `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStream {
    d: usize,
    rng: SplitMix64,
}

impl TokenStream {
    pub fn new(seed: u64, d: usize) -> Self {
        Self {
            d,
            rng: SplitMix64::seed_from_u64(seed),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    fn row(&mut self) -> Vec<f64> {
        (0..self.d).map(|_| self.rng.random_range(-1.0..=1.0)).collect()
    }

    /// Next `b` tokens as a block; each token draws q, then k, then v.
    pub fn block(&mut self, b: usize) -> AttentionInput {
        let (mut q, mut k, mut v) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..b {
            q.extend(self.row());
            k.extend(self.row());
            v.extend(self.row());
        }
        let m = |data| Matrix::new(b, self.d, data).expect("finite stream entries");
        AttentionInput {
            q: m(q),
            k: m(k),
            v: m(v),
        }
    }
}

use alloc::vec;
use alloc::vec::Vec;

use super::{
    check_window, divide_rows, ensure_healthy, expect_shape, logical_rows, Buffer,
    ContinualAttention, ContinualConfig, Counters, Mode, RefreshClock, Ring, StepInfo, StepOutput,
    TokenTriple,
};
use crate::error::{Error, Result};
use crate::reference::AttentionInput;
use crate::tensor::{axpy, kernel, rho_row_into, sqrt_dim, Matrix};

/// Exact attention with retroactively updated outputs for the whole window.
///
/// Keeps the unnormalized rows `A V` and their sums `phi(A)`. Each step removes the
/// outgoing key's contribution from every surviving row, adds the incoming one and
/// computes a fresh row for the new query.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoReState {
    ring: Ring,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    phi_a: Vec<f64>,
    av: Matrix,
    clock: RefreshClock,
    counters: Counters,
    poisoned: bool,
}

impl CoReState {
    /// Builds the state from a full window of `n` tokens.
    pub fn init(window: &AttentionInput, config: ContinualConfig) -> Result<Self> {
        check_window(window, 1)?;
        let n = window.n();
        let mut s = Self {
            ring: Ring::new(n),
            q: window.q.clone(),
            k: window.k.clone(),
            v: window.v.clone(),
            phi_a: vec![0.0; n],
            av: Matrix::zeros(n, window.d()),
            clock: RefreshClock::new(config.refresh, n),
            counters: Counters::default(),
            poisoned: false,
        };
        s.rebuild()?;
        Ok(s)
    }

    fn rebuild(&mut self) -> Result<()> {
        let n = self.n();
        let mut a = vec![0.0; n];
        for i in 0..n {
            let row = self.q.row(i).to_vec();
            self.fill_row(i, &row, &mut a)?;
        }
        Ok(())
    }

    /// Recomputes `phi(A)[slot]` and `AV[slot]` for query `q` against the whole window.
    fn fill_row(&mut self, slot: usize, q: &[f64], scratch: &mut [f64]) -> Result<()> {
        let (n, d) = (self.n(), self.d());
        rho_row_into(q, &self.k, scratch)?;
        let out = self.av.row_mut(slot);
        out.iter_mut().for_each(|x| *x = 0.0);
        for (j, &a) in scratch.iter().enumerate() {
            axpy(out, a, self.v.row(j));
        }
        self.phi_a[slot] = scratch.iter().sum();
        self.counters.ops += (2 * n * d + 2 * n) as u64;
        Ok(())
    }

    fn advance_inner(&mut self, t: TokenTriple<'_>) -> Result<StepInfo> {
        let (n, d) = (self.n(), self.d());
        let sd = sqrt_dim(d);
        let slot = self.ring.advance();
        let k_old = self.k.row(slot).to_vec();
        let v_old = self.v.row(slot).to_vec();
        self.q.row_mut(slot).copy_from_slice(t.q);
        self.k.row_mut(slot).copy_from_slice(t.k);
        self.v.row_mut(slot).copy_from_slice(t.v);

        let mut info = StepInfo::default();
        self.clock.tick();
        if self.clock.due() {
            self.rebuild()?;
            self.clock.reset();
            self.counters.refreshes += 1;
            info.refreshed = true;
        } else {
            for i in (0..n).filter(|&i| i != slot) {
                let q_i = self.q.row(i);
                let a_old = kernel(q_i, &k_old, sd)?;
                let a_new = kernel(q_i, t.k, sd)?;
                self.phi_a[i] += a_new - a_old;
                let row = self.av.row_mut(i);
                axpy(row, -a_old, &v_old);
                axpy(row, a_new, t.v);
            }
            self.counters.ops += (4 * (n - 1) * (d + 1)) as u64;
            let mut scratch = vec![0.0; n];
            self.fill_row(slot, t.q, &mut scratch)?;
        }
        self.counters.steps += 1;
        Ok(info)
    }

    /// Checks buffer shapes, e.g. after loading a snapshot.
    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.q.shape();
        expect_shape(
            self.ring.is_valid()
                && self.ring.len() == n
                && self.k.shape() == (n, d)
                && self.v.shape() == (n, d)
                && self.av.shape() == (n, d)
                && self.phi_a.len() == n,
            "CoReState buffers have inconsistent shapes",
        )
    }

    /// Advances one token and returns updated outputs for the whole window.
    pub fn step_retroactive(&mut self, t: TokenTriple<'_>) -> Result<Matrix> {
        self.advance(t)?;
        self.retroactive_output()
    }

    fn retroactive_output(&self) -> Result<Matrix> {
        let out = divide_rows(&self.av, &self.phi_a, "CoReState phi(A)")?;
        Ok(logical_rows(&self.ring, &out))
    }

    /// Current window, oldest token first.
    pub fn window(&self) -> AttentionInput {
        AttentionInput {
            q: logical_rows(&self.ring, &self.q),
            k: logical_rows(&self.ring, &self.k),
            v: logical_rows(&self.ring, &self.v),
        }
    }
}

impl ContinualAttention for CoReState {
    fn n(&self) -> usize {
        self.q.rows()
    }

    fn d(&self) -> usize {
        self.q.cols()
    }

    fn advance(&mut self, token: TokenTriple<'_>) -> Result<StepInfo> {
        ensure_healthy(self.poisoned)?;
        token.check(self.d())?;
        let r = self.advance_inner(token);
        self.poisoned = r.is_err();
        r
    }

    fn output(&self, mode: Mode) -> Result<StepOutput> {
        ensure_healthy(self.poisoned)?;
        let d = self.d();
        match mode {
            Mode::Retroactive => {
                let out = self.retroactive_output()?;
                Ok(StepOutput::Retroactive(out))
            }
            Mode::Single => {
                let slot = self.ring.newest();
                let s = self.phi_a[slot];
                if !(s > 0.0) {
                    return Err(Error::DivisionByZero {
                        op: "CoReState phi(A)",
                        index: slot,
                    });
                }
                let row = self.av.row(slot).iter().map(|x| x / s).collect::<Vec<_>>();
                debug_assert_eq!(row.len(), d);
                Ok(StepOutput::Single(row))
            }
        }
    }

    fn output_ops(&self, mode: Mode) -> u64 {
        let (n, d) = (self.n() as u64, self.d() as u64);
        match mode {
            Mode::Retroactive => n * d,
            Mode::Single => d,
        }
    }

    fn counters(&self) -> Counters {
        self.counters
    }

    fn buffers(&self) -> Vec<Buffer> {
        let (n, d) = (self.n(), self.d());
        vec![
            Buffer {
                name: "q_window",
                elements: n * d,
            },
            Buffer {
                name: "k_window",
                elements: n * d,
            },
            Buffer {
                name: "v_window",
                elements: n * d,
            },
            Buffer {
                name: "phi_a",
                elements: n,
            },
            Buffer {
                name: "av",
                elements: n * d,
            },
        ]
    }
}

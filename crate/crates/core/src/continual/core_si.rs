use alloc::vec;
use alloc::vec::Vec;

use super::{
    check_window, ensure_healthy, expect_shape, Buffer, ContinualAttention, Counters, Mode, Ring,
    StepInfo, StepOutput, TokenTriple,
};
use crate::error::{Error, Result};
use crate::reference::AttentionInput;
use crate::tensor::{axpy, rho_row_into, Matrix};

/// Exact attention for the newest query only.
///
/// Holds the key and value windows plus the newest query; every output is a fresh
/// `n`-long softmax row.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoSiState {
    ring: Ring,
    k: Matrix,
    v: Matrix,
    q_last: Vec<f64>,
    counters: Counters,
    poisoned: bool,
}

impl CoSiState {
    pub fn init(window: &AttentionInput) -> Result<Self> {
        check_window(window, 1)?;
        Ok(Self {
            ring: Ring::new(window.n()),
            k: window.k.clone(),
            v: window.v.clone(),
            q_last: window.q.row(window.n() - 1).to_vec(),
            counters: Counters::default(),
            poisoned: false,
        })
    }

    /// Checks buffer shapes, e.g. after loading a snapshot.
    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.k.shape();
        expect_shape(
            self.ring.is_valid()
                && self.ring.len() == n
                && self.v.shape() == (n, d)
                && self.q_last.len() == d,
            "CoSiState buffers have inconsistent shapes",
        )
    }

    /// Advances one token and returns the newest query's output.
    pub fn step_single(&mut self, t: TokenTriple<'_>) -> Result<Vec<f64>> {
        self.advance(t)?;
        self.single()
    }

    fn single(&self) -> Result<Vec<f64>> {
        let mut a = vec![0.0; self.n()];
        rho_row_into(&self.q_last, &self.k, &mut a)?;
        let s: f64 = a.iter().sum();
        if !(s > 0.0) {
            return Err(Error::DivisionByZero {
                op: "CoSiState phi(a)",
                index: 0,
            });
        }
        let mut out = vec![0.0; self.d()];
        for (j, &w) in a.iter().enumerate() {
            axpy(&mut out, w, self.v.row(j));
        }
        out.iter_mut().for_each(|x| *x /= s);
        Ok(out)
    }
}

impl ContinualAttention for CoSiState {
    fn n(&self) -> usize {
        self.k.rows()
    }

    fn d(&self) -> usize {
        self.k.cols()
    }

    fn advance(&mut self, t: TokenTriple<'_>) -> Result<StepInfo> {
        ensure_healthy(self.poisoned)?;
        t.check(self.d())?;
        let slot = self.ring.advance();
        self.k.row_mut(slot).copy_from_slice(t.k);
        self.v.row_mut(slot).copy_from_slice(t.v);
        self.q_last.copy_from_slice(t.q);
        self.counters.steps += 1;
        Ok(StepInfo::default())
    }

    fn output(&self, mode: Mode) -> Result<StepOutput> {
        ensure_healthy(self.poisoned)?;
        match mode {
            Mode::Single => Ok(StepOutput::Single(self.single()?)),
            Mode::Retroactive => Err(Error::InvalidArgument(
                "CoSiState keeps no query window; use CoReState for retroactive output",
            )),
        }
    }

    fn output_ops(&self, mode: Mode) -> u64 {
        let (n, d) = (self.n() as u64, self.d() as u64);
        match mode {
            Mode::Single => 2 * n * d + 2 * n + d,
            Mode::Retroactive => 0,
        }
    }

    fn counters(&self) -> Counters {
        self.counters
    }

    fn buffers(&self) -> Vec<Buffer> {
        let (n, d) = (self.n(), self.d());
        vec![
            Buffer {
                name: "k_window",
                elements: n * d,
            },
            Buffer {
                name: "v_window",
                elements: n * d,
            },
            Buffer {
                name: "q_last",
                elements: d,
            },
        ]
    }
}

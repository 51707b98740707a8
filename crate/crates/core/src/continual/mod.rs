//! Stateful one-token-per-step attention.
//!
//! Every state keeps a window of exactly `n` tokens and the cached products
//! needed to emit the next output without recomputing the window. Window-indexed
//! caches live in ring storage sharing one head pointer: slot `head` holds the
//! oldest token and is overwritten by the next arrival.
//!
//! | state              | output                  | landmarks                  |
//! |--------------------|-------------------------|----------------------------|
//! | [`CoReState`]      | retroactive or single   | none (exact)               |
//! | [`CoSiState`]      | single                  | none (exact)               |
//! | [`CoNyContState`]  | retroactive or single   | continual segment means    |
//! | [`CoNyFixedState`] | retroactive or single   | frozen                     |

mod cony_cont;
mod cony_fixed;
mod core_re;
mod core_si;

use alloc::vec::Vec;

pub use cony_cont::CoNyContState;
pub use cony_fixed::CoNyFixedState;
pub use core_re::CoReState;
pub use core_si::CoSiState;

use crate::error::{Error, Result};
use crate::reference::AttentionInput;
use crate::tensor::{Matrix, DEFAULT_PINV_ITERS};

/// Newest query, key and value rows entering the window.
#[derive(Debug, Clone, Copy)]
pub struct TokenTriple<'a> {
    pub q: &'a [f64],
    pub k: &'a [f64],
    pub v: &'a [f64],
}

impl<'a> TokenTriple<'a> {
    pub fn new(q: &'a [f64], k: &'a [f64], v: &'a [f64]) -> Self {
        Self { q, k, v }
    }

    /// Row `i` of a block.
    pub fn from_block(block: &'a AttentionInput, i: usize) -> Self {
        Self::new(block.q.row(i), block.k.row(i), block.v.row(i))
    }

    fn check(&self, d: usize) -> Result<()> {
        for (op, row) in [
            ("token q", self.q),
            ("token k", self.k),
            ("token v", self.v),
        ] {
            if row.len() != d {
                return Err(Error::DimensionMismatch {
                    op,
                    expected: (1, d),
                    found: (1, row.len()),
                });
            }
            if let Some(index) = row.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { index });
            }
        }
        Ok(())
    }
}

/// Which attention rows a step returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Mode {
    /// Updated outputs for every token in the window, oldest first.
    Retroactive,
    /// Output for the newest token only.
    Single,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutput {
    Retroactive(Matrix),
    Single(Vec<f64>),
}

impl StepOutput {
    /// Output row of the newest token.
    pub fn last_row(&self) -> &[f64] {
        match self {
            StepOutput::Retroactive(m) => m.row(m.rows() - 1),
            StepOutput::Single(v) => v,
        }
    }

    pub fn into_matrix(self) -> Matrix {
        match self {
            StepOutput::Retroactive(m) => m,
            StepOutput::Single(v) => {
                let d = v.len();
                Matrix::new(1, d, v).expect("finite output row")
            }
        }
    }
}

/// What happened during one state update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepInfo {
    /// A landmark was replaced (and the pseudo-inverse recomputed).
    pub landmark_updated: bool,
    /// Cached sums were rebuilt from the window to shed accumulated drift.
    pub refreshed: bool,
}

/// When to rebuild subtraction-updated caches from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum RefreshPolicy {
    Never,
    /// Every `k` steps.
    Every(usize),
    /// Every `k * n` steps.
    WindowMultiple(usize),
}

impl RefreshPolicy {
    pub(crate) fn interval(self, n: usize) -> Option<usize> {
        match self {
            RefreshPolicy::Never => None,
            RefreshPolicy::Every(k) => Some(k.max(1)),
            RefreshPolicy::WindowMultiple(k) => Some((k * n).max(1)),
        }
    }
}

impl Default for RefreshPolicy {
    fn default() -> Self {
        RefreshPolicy::WindowMultiple(10)
    }
}

/// Tunables shared by the continual states.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContinualConfig {
    pub pinv_iters: usize,
    pub refresh: RefreshPolicy,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        Self {
            pinv_iters: DEFAULT_PINV_ITERS,
            refresh: RefreshPolicy::default(),
        }
    }
}

/// Instrumentation counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Counters {
    /// Element operations, counted the way the analytic cost model does: one per
    /// multiply-accumulate, exponential, division or addition.
    pub ops: u64,
    pub pinv_calls: u64,
    pub steps: u64,
    pub refreshes: u64,
}

/// Element count of one cached buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Buffer {
    pub name: &'static str,
    pub elements: usize,
}

/// Common driver interface of the continual states.
pub trait ContinualAttention {
    fn n(&self) -> usize;
    fn d(&self) -> usize;

    /// Slides the window by one token and updates every cache.
    fn advance(&mut self, token: TokenTriple<'_>) -> Result<StepInfo>;

    /// Attention for the current window.
    fn output(&self, mode: Mode) -> Result<StepOutput>;

    /// Element operations one [`output`](Self::output) call performs.
    fn output_ops(&self, mode: Mode) -> u64;

    fn counters(&self) -> Counters;

    /// Buffers kept between steps.
    fn buffers(&self) -> Vec<Buffer>;

    fn step(&mut self, token: TokenTriple<'_>, mode: Mode) -> Result<StepOutput> {
        self.advance(token)?;
        self.output(mode)
    }

    /// `b` tokens at once; equivalent to `b` sequential steps, emitting only the final output.
    fn block_step(&mut self, block: &AttentionInput, mode: Mode) -> Result<StepOutput> {
        block.validate()?;
        if block.n() > self.n() {
            return Err(Error::InvalidArgument("block longer than the window"));
        }
        if block.d() != self.d() {
            return Err(Error::DimensionMismatch {
                op: "block_step",
                expected: (block.n(), self.d()),
                found: (block.n(), block.d()),
            });
        }
        for i in 0..block.n() {
            self.advance(TokenTriple::from_block(block, i))?;
        }
        self.output(mode)
    }

    fn resident_elements(&self) -> usize {
        self.buffers().iter().map(|b| b.elements).sum()
    }
}

/// Ring position shared by all window-indexed buffers of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub(crate) struct Ring {
    n: usize,
    /// Physical slot of the oldest token.
    head: usize,
}

impl Ring {
    pub(crate) fn new(n: usize) -> Self {
        Self { n, head: 0 }
    }

    /// Physical slot of logical position `i` (0 = oldest).
    #[inline]
    pub(crate) fn slot(&self, i: usize) -> usize {
        let s = self.head + i;
        if s >= self.n {
            s - self.n
        } else {
            s
        }
    }

    #[inline]
    pub(crate) fn newest(&self) -> usize {
        self.slot(self.n - 1)
    }

    /// Claims the oldest slot for an incoming token and returns it.
    #[inline]
    pub(crate) fn advance(&mut self) -> usize {
        let slot = self.head;
        self.head = if slot + 1 == self.n { 0 } else { slot + 1 };
        slot
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }

    pub(crate) fn is_valid(&self) -> bool {
        self.n > 0 && self.head < self.n
    }
}

/// Copy of `rows` reordered from physical slots to window order.
pub(crate) fn logical_rows(ring: &Ring, rows: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(rows.rows(), rows.cols());
    for i in 0..rows.rows() {
        out.row_mut(i).copy_from_slice(rows.row(ring.slot(i)));
    }
    out
}

/// `values[i] / norms[i]` row by row; non-positive norms are reported as underflow.
pub(crate) fn divide_rows(values: &Matrix, norms: &[f64], op: &'static str) -> Result<Matrix> {
    let mut out = values.clone();
    for (i, &s) in norms.iter().enumerate() {
        if !(s > 0.0) {
            return Err(Error::DivisionByZero { op, index: i });
        }
        for x in out.row_mut(i) {
            *x /= s;
        }
    }
    Ok(out)
}

pub(crate) fn check_window(window: &AttentionInput, n_min: usize) -> Result<()> {
    window.validate()?;
    if window.n() < n_min {
        return Err(Error::InvalidArgument("window shorter than required"));
    }
    Ok(())
}

/// Tracks steps since the last cache rebuild.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub(crate) struct RefreshClock {
    interval: Option<usize>,
    since: usize,
}

impl RefreshClock {
    pub(crate) fn new(policy: RefreshPolicy, n: usize) -> Self {
        Self {
            interval: policy.interval(n),
            since: 0,
        }
    }

    pub(crate) fn tick(&mut self) {
        self.since += 1;
    }

    pub(crate) fn due(&self) -> bool {
        self.interval.is_some_and(|k| self.since >= k)
    }

    pub(crate) fn reset(&mut self) {
        self.since = 0;
    }
}

/// Rejects use of a state whose last update failed part-way.
pub(crate) fn ensure_healthy(poisoned: bool) -> Result<()> {
    if poisoned {
        Err(Error::InvalidArgument(
            "state is inconsistent after a failed update; rebuild it from a window",
        ))
    } else {
        Ok(())
    }
}

/// Shape check used after deserializing a state.
pub(crate) fn expect_shape(ok: bool, what: &'static str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(what))
    }
}

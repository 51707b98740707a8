use alloc::vec;
use alloc::vec::Vec;

use super::{
    check_window, divide_rows, ensure_healthy, expect_shape, logical_rows, Buffer,
    ContinualAttention, ContinualConfig, Counters, Mode, RefreshClock, Ring, StepInfo, StepOutput,
    TokenTriple,
};
use crate::error::{Error, Result};
use crate::landmarks::LandmarkPair;
use crate::reference::AttentionInput;
use crate::tensor::{axpy, normalized, pinv_iterative, rho, rho_row_into, Matrix};

/// Nystrom attention over frozen landmarks.
///
/// `Gamma_phi^+` is computed once. Per token the state caches the landmark-query
/// column `rho(Q~, k_i)` (so the outgoing key itself is never needed) and the row
/// `B_phi[i] Gamma_phi^+`. No queries are stored.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoNyFixedState {
    ring: Ring,
    landmarks: LandmarkPair,
    gamma_phi_pinv: Matrix,
    v: Matrix,
    delta_cols: Matrix,
    phi_delta: Vec<f64>,
    delta_v: Matrix,
    b_gamma: Matrix,
    clock: RefreshClock,
    counters: Counters,
    poisoned: bool,
}

impl CoNyFixedState {
    pub fn init(
        window: &AttentionInput,
        landmarks: LandmarkPair,
        config: ContinualConfig,
    ) -> Result<Self> {
        check_window(window, 1)?;
        let (n, d, m) = (window.n(), window.d(), landmarks.m());
        if landmarks.d() != d {
            return Err(Error::DimensionMismatch {
                op: "CoNyFixedState landmarks",
                expected: (m, d),
                found: (m, landmarks.d()),
            });
        }
        let gamma_phi = normalized(&rho(&landmarks.q, &landmarks.k)?)?;
        let gamma_phi_pinv = pinv_iterative(&gamma_phi, config.pinv_iters)?;
        let b_gamma = normalized(&rho(&window.q, &landmarks.k)?)?.matmul(&gamma_phi_pinv)?;
        let delta_cols = rho(&window.k, &landmarks.q)?;
        let mut s = Self {
            ring: Ring::new(n),
            landmarks,
            gamma_phi_pinv,
            v: window.v.clone(),
            delta_cols,
            phi_delta: vec![0.0; m],
            delta_v: Matrix::zeros(m, d),
            b_gamma,
            clock: RefreshClock::new(config.refresh, n),
            counters: Counters {
                pinv_calls: 1,
                ..Counters::default()
            },
            poisoned: false,
        };
        s.rebuild_sums();
        Ok(s)
    }

    pub fn m(&self) -> usize {
        self.landmarks.m()
    }

    pub fn landmarks(&self) -> &LandmarkPair {
        &self.landmarks
    }

    /// Checks buffer shapes, e.g. after loading a snapshot.
    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.v.shape();
        let m = self.landmarks.m();
        expect_shape(
            self.ring.is_valid()
                && self.ring.len() == n
                && self.landmarks.k.shape() == (m, d)
                && self.landmarks.q.shape() == (m, d)
                && self.gamma_phi_pinv.shape() == (m, m)
                && self.delta_cols.shape() == (n, m)
                && self.phi_delta.len() == m
                && self.delta_v.shape() == (m, d)
                && self.b_gamma.shape() == (n, m),
            "CoNyFixedState buffers have inconsistent shapes",
        )
    }

    fn rebuild_sums(&mut self) {
        let m = self.m();
        self.phi_delta.iter_mut().for_each(|x| *x = 0.0);
        self.delta_v = Matrix::zeros(m, self.d());
        for j in 0..self.n() {
            let col = self.delta_cols.row(j);
            for l in 0..m {
                self.phi_delta[l] += col[l];
                axpy(self.delta_v.row_mut(l), col[l], self.v.row(j));
            }
        }
        self.counters.ops += (self.n() * m * (self.d() + 1)) as u64;
    }

    /// `phi(Delta)^{-1} Delta V`, the landmark-attended values.
    fn attended_values(&self) -> Result<Matrix> {
        divide_rows(&self.delta_v, &self.phi_delta, "CoNyFixedState phi(Delta)")
    }

    fn advance_inner(&mut self, t: TokenTriple<'_>) -> Result<StepInfo> {
        let (d, m) = (self.d(), self.m());
        let mut col = vec![0.0; m];
        rho_row_into(t.k, &self.landmarks.q, &mut col)?;
        let mut b = vec![0.0; m];
        rho_row_into(t.q, &self.landmarks.k, &mut b)?;
        let phi_b: f64 = b.iter().sum();
        if !(phi_b > 0.0) {
            return Err(Error::DivisionByZero {
                op: "CoNyFixedState phi(B)",
                index: 0,
            });
        }
        b.iter_mut().for_each(|x| *x /= phi_b);

        let slot = self.ring.advance();
        let old = self.delta_cols.row(slot).to_vec();
        let v_old = self.v.row(slot).to_vec();
        for l in 0..m {
            self.phi_delta[l] += col[l] - old[l];
            let row = self.delta_v.row_mut(l);
            axpy(row, -old[l], &v_old);
            axpy(row, col[l], t.v);
        }
        self.delta_cols.row_mut(slot).copy_from_slice(&col);
        self.v.row_mut(slot).copy_from_slice(t.v);

        let bg = self.b_gamma.row_mut(slot);
        bg.iter_mut().for_each(|x| *x = 0.0);
        for (l, &w) in b.iter().enumerate() {
            axpy(bg, w, self.gamma_phi_pinv.row(l));
        }
        self.counters.ops += (2 * m * (d + 1) + 2 * m + 2 * m * d + 2 * m + m * m) as u64;

        let mut info = StepInfo::default();
        self.clock.tick();
        if self.clock.due() {
            self.rebuild_sums();
            self.clock.reset();
            self.counters.refreshes += 1;
            info.refreshed = true;
        }
        self.counters.steps += 1;
        Ok(info)
    }

    /// Advances one token and returns updated outputs for the whole window.
    pub fn step_retroactive(&mut self, t: TokenTriple<'_>) -> Result<Matrix> {
        self.advance(t)?;
        match self.output(Mode::Retroactive)? {
            StepOutput::Retroactive(m) => Ok(m),
            StepOutput::Single(_) => unreachable!(),
        }
    }

    /// Advances one token and returns the newest query's output.
    pub fn step_single(&mut self, t: TokenTriple<'_>) -> Result<Vec<f64>> {
        self.advance(t)?;
        match self.output(Mode::Single)? {
            StepOutput::Single(v) => Ok(v),
            StepOutput::Retroactive(_) => unreachable!(),
        }
    }
}

impl ContinualAttention for CoNyFixedState {
    fn n(&self) -> usize {
        self.v.rows()
    }

    fn d(&self) -> usize {
        self.v.cols()
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
        let w = self.attended_values()?;
        match mode {
            Mode::Retroactive => {
                let out = logical_rows(&self.ring, &self.b_gamma).matmul(&w)?;
                Ok(StepOutput::Retroactive(out))
            }
            Mode::Single => {
                let mut out = vec![0.0; self.d()];
                for (l, &x) in self.b_gamma.row(self.ring.newest()).iter().enumerate() {
                    axpy(&mut out, x, w.row(l));
                }
                Ok(StepOutput::Single(out))
            }
        }
    }

    fn output_ops(&self, mode: Mode) -> u64 {
        let (n, d, m) = (self.n() as u64, self.d() as u64, self.m() as u64);
        match mode {
            Mode::Retroactive => m * d + n * m * d,
            Mode::Single => 2 * m * d,
        }
    }

    fn counters(&self) -> Counters {
        self.counters
    }

    fn buffers(&self) -> Vec<Buffer> {
        let (n, d, m) = (self.n(), self.d(), self.m());
        vec![
            Buffer {
                name: "q_landmarks",
                elements: m * d,
            },
            Buffer {
                name: "k_landmarks",
                elements: m * d,
            },
            Buffer {
                name: "gamma_phi_pinv",
                elements: m * m,
            },
            Buffer {
                name: "v_window",
                elements: n * d,
            },
            Buffer {
                name: "delta_cols",
                elements: n * m,
            },
            Buffer {
                name: "phi_delta",
                elements: m,
            },
            Buffer {
                name: "delta_v",
                elements: m * d,
            },
            Buffer {
                name: "b_gamma",
                elements: n * m,
            },
        ]
    }
}

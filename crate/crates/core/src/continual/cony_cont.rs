use alloc::vec;
use alloc::vec::Vec;

use super::{
    check_window, divide_rows, ensure_healthy, expect_shape, logical_rows, Buffer,
    ContinualAttention, ContinualConfig, Counters, Mode, RefreshClock, Ring, StepInfo, StepOutput,
    TokenTriple,
};
use crate::error::{Error, Result};
use crate::landmarks::{LandmarkPair, LandmarkSchedule, LandmarkUpdate};
use crate::reference::{segment_means, AttentionInput};
use crate::tensor::{
    axpy, kernel, normalized, phi, pinv_iterative, rho, rho_row_into, row_scale, sqrt_dim, Matrix,
};

/// Nystrom attention whose landmarks follow the stream as segment means.
///
/// Between landmark updates only the rows and columns touched by the incoming and
/// outgoing tokens change and no pseudo-inverse is computed. When a segment
/// completes, the oldest landmark is replaced, `B`, `Gamma` and `Delta` are patched
/// by one column or row each, and `Gamma_phi^+` is recomputed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoNyContState {
    ring: Ring,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    landmarks: LandmarkPair,
    schedule: LandmarkSchedule,
    /// `rho(q_i, K~)` per window slot, columns in landmark order.
    b: Matrix,
    phi_b: Vec<f64>,
    /// `B_phi[i] Gamma_phi^+` per window slot.
    b_gamma: Matrix,
    gamma: Matrix,
    phi_gamma: Vec<f64>,
    phi_delta: Vec<f64>,
    delta_v: Matrix,
    gamma_phi_pinv: Matrix,
    pinv_iters: usize,
    clock: RefreshClock,
    counters: Counters,
    poisoned: bool,
}

impl CoNyContState {
    /// Builds the state from a full window of `n` tokens, taking its `m` segment means
    /// as the initial landmarks.
    pub fn init(window: &AttentionInput, m: usize, config: ContinualConfig) -> Result<Self> {
        check_window(window, 1)?;
        let (n, d) = (window.n(), window.d());
        let landmarks =
            LandmarkPair::new(segment_means(&window.q, m)?, segment_means(&window.k, m)?)?;
        let mut s = Self {
            ring: Ring::new(n),
            q: window.q.clone(),
            k: window.k.clone(),
            v: window.v.clone(),
            landmarks,
            schedule: LandmarkSchedule::new(n, m, d)?,
            b: Matrix::zeros(n, m),
            phi_b: vec![0.0; n],
            b_gamma: Matrix::zeros(n, m),
            gamma: Matrix::zeros(m, m),
            phi_gamma: vec![0.0; m],
            phi_delta: vec![0.0; m],
            delta_v: Matrix::zeros(m, d),
            gamma_phi_pinv: Matrix::zeros(m, m),
            pinv_iters: config.pinv_iters,
            clock: RefreshClock::new(config.refresh, n),
            counters: Counters::default(),
            poisoned: false,
        };
        s.rebuild()?;
        Ok(s)
    }

    pub fn m(&self) -> usize {
        self.landmarks.m()
    }

    /// Current landmarks, oldest first.
    pub fn landmarks(&self) -> &LandmarkPair {
        &self.landmarks
    }

    pub fn schedule(&self) -> &LandmarkSchedule {
        &self.schedule
    }

    /// Current window, oldest token first.
    pub fn window(&self) -> AttentionInput {
        AttentionInput {
            q: logical_rows(&self.ring, &self.q),
            k: logical_rows(&self.ring, &self.k),
            v: logical_rows(&self.ring, &self.v),
        }
    }

    /// Checks buffer shapes and the landmark schedule, e.g. after loading a snapshot.
    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.q.shape();
        let m = self.landmarks.m();
        expect_shape(
            self.ring.is_valid()
                && self.ring.len() == n
                && self.k.shape() == (n, d)
                && self.v.shape() == (n, d)
                && self.landmarks.q.shape() == (m, d)
                && self.landmarks.k.shape() == (m, d)
                && self.schedule.n() == n
                && self.schedule.m() == m
                && self.schedule.d() == d
                && self.b.shape() == (n, m)
                && self.phi_b.len() == n
                && self.b_gamma.shape() == (n, m)
                && self.gamma.shape() == (m, m)
                && self.phi_gamma.len() == m
                && self.phi_delta.len() == m
                && self.delta_v.shape() == (m, d)
                && self.gamma_phi_pinv.shape() == (m, m),
            "CoNyContState buffers have inconsistent shapes",
        )?;
        self.schedule.validate()
    }

    /// Recomputes every cache from the window and the current landmarks.
    fn rebuild(&mut self) -> Result<()> {
        let (n, d, m) = (self.n(), self.d(), self.m());
        self.b = rho(&self.q, &self.landmarks.k)?;
        self.phi_b = phi(&self.b);
        self.gamma = rho(&self.landmarks.q, &self.landmarks.k)?;
        self.phi_gamma = phi(&self.gamma);
        let delta = rho(&self.landmarks.q, &self.k)?;
        self.phi_delta = phi(&delta);
        self.delta_v = delta.matmul(&self.v)?;
        self.counters.ops += (n * m * (d + 2) + m * m * (d + 2) + m * n * (2 * d + 2)) as u64;
        self.refresh_pinv()
    }

    /// New `Gamma_phi^+` and every `B_phi Gamma_phi^+` row.
    fn refresh_pinv(&mut self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        let gamma_phi = row_scale(&self.gamma, &self.phi_gamma)?;
        self.gamma_phi_pinv = pinv_iterative(&gamma_phi, self.pinv_iters)?;
        self.counters.pinv_calls += 1;
        self.counters.ops += (m * m + 4 * m * m * m * self.pinv_iters) as u64;
        for i in 0..n {
            self.fill_b_gamma(i)?;
        }
        Ok(())
    }

    fn fill_b_gamma(&mut self, slot: usize) -> Result<()> {
        let m = self.m();
        let s = self.phi_b[slot];
        if !(s > 0.0) {
            return Err(Error::DivisionByZero {
                op: "CoNyContState phi(B)",
                index: slot,
            });
        }
        let (b, out) = (self.b.row(slot), self.b_gamma.row_mut(slot));
        out.iter_mut().for_each(|x| *x = 0.0);
        for (l, &x) in b.iter().enumerate() {
            axpy(out, x / s, self.gamma_phi_pinv.row(l));
        }
        self.counters.ops += (m + m * m) as u64;
        Ok(())
    }

    /// New row of `B` and `phi(B)` for the token in `slot`.
    fn fill_b(&mut self, slot: usize) -> Result<()> {
        let m = self.m();
        rho_row_into(self.q.row(slot), &self.landmarks.k, self.b.row_mut(slot))?;
        self.phi_b[slot] = self.b.row(slot).iter().sum();
        self.counters.ops += (m * (self.d() + 2)) as u64;
        Ok(())
    }

    /// Swaps the outgoing key/value for the incoming one in the first `rows` landmark rows of `Delta`.
    fn patch_delta(
        &mut self,
        rows: usize,
        k_old: &[f64],
        v_old: &[f64],
        slot: usize,
    ) -> Result<()> {
        let sd = sqrt_dim(self.d());
        for l in 0..rows {
            let q_l = self.landmarks.q.row(l);
            let r_old = kernel(q_l, k_old, sd)?;
            let r_new = kernel(q_l, self.k.row(slot), sd)?;
            self.phi_delta[l] += r_new - r_old;
            let row = self.delta_v.row_mut(l);
            axpy(row, -r_old, v_old);
            axpy(row, r_new, self.v.row(slot));
        }
        self.counters.ops += (rows * (4 * self.d() + 4)) as u64;
        Ok(())
    }

    fn advance_inner(&mut self, t: TokenTriple<'_>) -> Result<StepInfo> {
        let update = self.schedule.push(t.q, t.k);
        let slot = self.ring.advance();
        let k_old = self.k.row(slot).to_vec();
        let v_old = self.v.row(slot).to_vec();
        self.q.row_mut(slot).copy_from_slice(t.q);
        self.k.row_mut(slot).copy_from_slice(t.k);
        self.v.row_mut(slot).copy_from_slice(t.v);
        self.clock.tick();
        self.counters.steps += 1;

        let mut info = StepInfo::default();
        match update {
            None => {
                self.patch_delta(self.m(), &k_old, &v_old, slot)?;
                self.fill_b(slot)?;
                self.fill_b_gamma(slot)?;
            }
            Some(up) => {
                info.landmark_updated = true;
                if self.clock.due() {
                    self.landmarks.replace_oldest(&up.q, &up.k);
                    self.rebuild()?;
                    self.clock.reset();
                    self.counters.refreshes += 1;
                    info.refreshed = true;
                } else {
                    self.replace_landmark(&up, &k_old, &v_old, slot)?;
                    self.refresh_pinv()?;
                }
            }
        }
        Ok(info)
    }

    fn replace_landmark(
        &mut self,
        up: &LandmarkUpdate,
        k_old: &[f64],
        v_old: &[f64],
        slot: usize,
    ) -> Result<()> {
        let (n, d, m) = (self.n(), self.d(), self.m());
        let last = m - 1;
        let sd = sqrt_dim(d);
        let k_land_old = self.landmarks.k.row(0).to_vec();
        self.landmarks.replace_oldest(&up.q, &up.k);

        // B: drop the oldest landmark column, append the newest
        for i in (0..n).filter(|&i| i != slot) {
            let q_i = self.q.row(i);
            let a_old = kernel(q_i, &k_land_old, sd)?;
            let a_new = kernel(q_i, &up.k, sd)?;
            self.phi_b[i] += a_new - a_old;
            let row = self.b.row_mut(i);
            row.copy_within(1.., 0);
            row[last] = a_new;
        }
        self.counters.ops += (2 * (n - 1) * (d + 2)) as u64;
        self.fill_b(slot)?;

        // Gamma: shift up-left, new last column for surviving rows, new last row
        for i in 0..last {
            for j in 0..last {
                let x = self.gamma.get(i + 1, j + 1);
                self.gamma.set(i, j, x);
            }
            let q_i = self.landmarks.q.row(i);
            let g_old = kernel(q_i, &k_land_old, sd)?;
            let g_new = kernel(q_i, &up.k, sd)?;
            self.gamma.set(i, last, g_new);
            self.phi_gamma[i] = self.phi_gamma[i + 1] - g_old + g_new;
        }
        rho_row_into(&up.q, &self.landmarks.k, self.gamma.row_mut(last))?;
        self.phi_gamma[last] = self.gamma.row(last).iter().sum();
        self.counters.ops += (2 * last * (d + 2) + m * (d + 2)) as u64;

        // Delta: surviving landmark rows see the token swap, the new landmark row is fresh
        self.phi_delta.copy_within(1.., 0);
        self.delta_v.shift_rows_append(&vec![0.0; d]);
        self.patch_delta(last, k_old, v_old, slot)?;
        let mut r = vec![0.0; n];
        rho_row_into(&up.q, &self.k, &mut r)?;
        self.phi_delta[last] = r.iter().sum();
        let row = self.delta_v.row_mut(last);
        for (j, &x) in r.iter().enumerate() {
            axpy(row, x, self.v.row(j));
        }
        self.counters.ops += (n * (2 * d + 2)) as u64;
        Ok(())
    }

    /// Gamma_phi as currently cached.
    pub fn gamma_phi(&self) -> Result<Matrix> {
        normalized(&self.gamma)
    }

    /// Advances one token and returns updated outputs for the whole window.
    pub fn step_retroactive(&mut self, t: TokenTriple<'_>) -> Result<Matrix> {
        self.advance(t)?;
        Ok(self.output(Mode::Retroactive)?.into_matrix())
    }

    /// Advances one token and returns the newest query's output.
    pub fn step_single(&mut self, t: TokenTriple<'_>) -> Result<Vec<f64>> {
        self.advance(t)?;
        Ok(self.output(Mode::Single)?.last_row().to_vec())
    }
}

impl ContinualAttention for CoNyContState {
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
        let w = divide_rows(&self.delta_v, &self.phi_delta, "CoNyContState phi(Delta)")?;
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
                name: "q_landmarks",
                elements: m * d,
            },
            Buffer {
                name: "k_landmarks",
                elements: m * d,
            },
            Buffer {
                name: "schedule_accumulators",
                elements: 2 * d,
            },
            Buffer {
                name: "b",
                elements: n * m,
            },
            Buffer {
                name: "phi_b",
                elements: n,
            },
            Buffer {
                name: "b_gamma",
                elements: n * m,
            },
            Buffer {
                name: "gamma",
                elements: m * m,
            },
            Buffer {
                name: "phi_gamma",
                elements: m,
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
                name: "gamma_phi_pinv",
                elements: m * m,
            },
        ]
    }
}

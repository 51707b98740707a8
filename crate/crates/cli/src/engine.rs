//! Uniform driver over every attention variant, plus its from-scratch oracle.

use conystrom_core::continual::{
    CoNyContState, CoNyFixedState, CoReState, CoSiState, ContinualAttention, ContinualConfig, Mode, StepOutput,
    TokenTriple,
};
use conystrom_core::cost::{Variant, VariantCost};
use conystrom_core::landmarks::LandmarkPair;
use conystrom_core::{sda_exact, sda_nystrom, segment_means, AttentionInput, Matrix};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Sliding window of the last `n` tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window(pub AttentionInput);

impl Window {
    pub fn push(&mut self, block: &AttentionInput, i: usize) {
        let shift = |m: &mut Matrix, row: &[f64]| {
            let (n, d) = m.shape();
            let data = m.as_mut_slice();
            data.copy_within(d.., 0);
            data[(n - 1) * d..].copy_from_slice(row);
        };
        shift(&mut self.0.q, block.q.row(i));
        shift(&mut self.0.k, block.k.row(i));
        shift(&mut self.0.v, block.v.row(i));
    }
}

/// Per-variant state. Batch variants recompute from their own window every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Engine {
    Att(Window),
    Ny { window: Window, m: usize, pinv_iters: usize },
    NyFix { window: Window, landmarks: LandmarkPair, pinv_iters: usize },
    CoSi(CoSiState),
    CoRe(CoReState),
    CoNySiCont(CoNyContState),
    CoNyReCont(CoNyContState),
    CoNySiFix(CoNyFixedState),
    CoNyReFix(CoNyFixedState),
}

/// Output of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// All window rows for retroactive variants, one row otherwise.
    pub output: Matrix,
    pub landmark_updated: bool,
}

impl Engine {
    pub fn init(
        variant: Variant,
        window: &AttentionInput,
        m: usize,
        landmarks: Option<LandmarkPair>,
        config: ContinualConfig,
    ) -> CliResult<Self> {
        let fixed = || landmarks.clone().ok_or_else(|| CliError::Usage(format!("{variant} needs landmarks")));
        Ok(match variant {
            Variant::Att => Engine::Att(Window(window.clone())),
            Variant::Ny => Engine::Ny {
                window: Window(window.clone()),
                m,
                pinv_iters: config.pinv_iters,
            },
            Variant::NyFix => Engine::NyFix {
                window: Window(window.clone()),
                landmarks: fixed()?,
                pinv_iters: config.pinv_iters,
            },
            Variant::CoSi => Engine::CoSi(CoSiState::init(window)?),
            Variant::CoRe => Engine::CoRe(CoReState::init(window, config)?),
            Variant::CoNySiCont => Engine::CoNySiCont(CoNyContState::init(window, m, config)?),
            Variant::CoNyReCont => Engine::CoNyReCont(CoNyContState::init(window, m, config)?),
            Variant::CoNySiFix => Engine::CoNySiFix(CoNyFixedState::init(window, fixed()?, config)?),
            Variant::CoNyReFix => Engine::CoNyReFix(CoNyFixedState::init(window, fixed()?, config)?),
        })
    }

    pub fn variant(&self) -> Variant {
        match self {
            Engine::Att(_) => Variant::Att,
            Engine::Ny { .. } => Variant::Ny,
            Engine::NyFix { .. } => Variant::NyFix,
            Engine::CoSi(_) => Variant::CoSi,
            Engine::CoRe(_) => Variant::CoRe,
            Engine::CoNySiCont(_) => Variant::CoNySiCont,
            Engine::CoNyReCont(_) => Variant::CoNyReCont,
            Engine::CoNySiFix(_) => Variant::CoNySiFix,
            Engine::CoNyReFix(_) => Variant::CoNyReFix,
        }
    }

    fn continual(&mut self) -> Option<&mut dyn ContinualAttention> {
        match self {
            Engine::CoSi(s) => Some(s),
            Engine::CoRe(s) => Some(s),
            Engine::CoNySiCont(s) | Engine::CoNyReCont(s) => Some(s),
            Engine::CoNySiFix(s) | Engine::CoNyReFix(s) => Some(s),
            _ => None,
        }
    }

    fn mode(&self) -> Mode {
        if self.variant().is_single_output() {
            Mode::Single
        } else {
            Mode::Retroactive
        }
    }

    /// Consumes row `i` of `block`.
    pub fn step(&mut self, block: &AttentionInput, i: usize) -> conystrom_core::Result<Step> {
        let mode = self.mode();
        if let Some(s) = self.continual() {
            let info = s.advance(TokenTriple::from_block(block, i))?;
            let output = match s.output(mode)? {
                StepOutput::Retroactive(m) => m,
                single => single.into_matrix(),
            };
            return Ok(Step {
                output,
                landmark_updated: info.landmark_updated,
            });
        }
        let output = match self {
            Engine::Att(w) => {
                w.push(block, i);
                sda_exact(&w.0)?
            }
            Engine::Ny { window, m, pinv_iters } => {
                window.push(block, i);
                let (ql, kl) = (segment_means(&window.0.q, *m)?, segment_means(&window.0.k, *m)?);
                sda_nystrom(&window.0, &ql, &kl, *pinv_iters)?
            }
            Engine::NyFix {
                window,
                landmarks,
                pinv_iters,
            } => {
                window.push(block, i);
                sda_nystrom(&window.0, &landmarks.q, &landmarks.k, *pinv_iters)?
            }
            _ => unreachable!(),
        };
        Ok(Step {
            output,
            landmark_updated: false,
        })
    }

    /// Landmarks the oracle must use for the current step, if any.
    pub fn landmarks(&self) -> Option<LandmarkPair> {
        match self {
            Engine::Ny { window, m, .. } => Some(LandmarkPair {
                q: segment_means(&window.0.q, *m).ok()?,
                k: segment_means(&window.0.k, *m).ok()?,
            }),
            Engine::NyFix { landmarks, .. } => Some(landmarks.clone()),
            Engine::CoNySiCont(s) | Engine::CoNyReCont(s) => Some(s.landmarks().clone()),
            Engine::CoNySiFix(s) | Engine::CoNyReFix(s) => Some(s.landmarks().clone()),
            _ => None,
        }
    }

    /// Batch evaluation on `window` with this engine's landmarks, restricted to the
    /// rows the engine emits.
    pub fn oracle(&self, window: &AttentionInput, pinv_iters: usize) -> conystrom_core::Result<Matrix> {
        let full = match self.landmarks() {
            Some(l) => sda_nystrom(window, &l.q, &l.k, pinv_iters)?,
            None => sda_exact(window)?,
        };
        Ok(if self.mode() == Mode::Single {
            let n = full.rows();
            full.slice_rows(n - 1, n)
        } else {
            full
        })
    }

    /// Shape check after deserialization.
    pub fn validate(&self) -> CliResult<()> {
        match self {
            Engine::Att(w) | Engine::Ny { window: w, .. } | Engine::NyFix { window: w, .. } => w.0.validate()?,
            Engine::CoSi(s) => s.validate()?,
            Engine::CoRe(s) => s.validate()?,
            Engine::CoNySiCont(s) | Engine::CoNyReCont(s) => s.validate()?,
            Engine::CoNySiFix(s) | Engine::CoNyReFix(s) => s.validate()?,
        }
        Ok(())
    }

    /// Cost-model FLOPs for the path the last step took.
    pub fn flops_analytic(&self, cost: &VariantCost, landmark_updated: bool) -> CliResult<u64> {
        Ok(if !cost.variant.has_continual_landmarks() {
            cost.flops()?
        } else if landmark_updated {
            cost.flops_updated()?
        } else {
            cost.flops_non_updated()?
        })
    }
}

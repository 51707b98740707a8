//! Closed-form per-step FLOP and memory counts for every attention variant.
//!
//! All counts are exact integer polynomials in `n` (window length), `d` (token
//! dimension) and `m` (landmarks), including low-order terms.

use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Variant {
    /// Full softmax attention recomputed per step.
    Att,
    /// Nystrom attention with segment-means landmarks recomputed per step.
    Ny,
    /// Nystrom attention with fixed landmarks recomputed per step.
    NyFix,
    /// Continual single-output exact attention.
    CoSi,
    /// Continual retroactive exact attention.
    CoRe,
    CoNySiCont,
    CoNyReCont,
    CoNySiFix,
    CoNyReFix,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Att,
        Variant::Ny,
        Variant::NyFix,
        Variant::CoSi,
        Variant::CoRe,
        Variant::CoNySiCont,
        Variant::CoNyReCont,
        Variant::CoNySiFix,
        Variant::CoNyReFix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Att => "att",
            Variant::Ny => "ny",
            Variant::NyFix => "ny-fix",
            Variant::CoSi => "co-si",
            Variant::CoRe => "co-re",
            Variant::CoNySiCont => "cony-si-cont",
            Variant::CoNyReCont => "cony-re-cont",
            Variant::CoNySiFix => "cony-si-fix",
            Variant::CoNyReFix => "cony-re-fix",
        }
    }

    /// Uses landmarks (and therefore `m`).
    pub fn is_nystrom(self) -> bool {
        !matches!(self, Variant::Att | Variant::CoSi | Variant::CoRe)
    }

    /// Landmarks follow the stream, so steps alternate between two cost paths.
    pub fn has_continual_landmarks(self) -> bool {
        matches!(self, Variant::CoNySiCont | Variant::CoNyReCont)
    }

    /// Emits only the newest token's output.
    pub fn is_single_output(self) -> bool {
        matches!(self, Variant::CoSi | Variant::CoNySiCont | Variant::CoNySiFix)
    }

    /// Variant feeding a single-output variant in a stack: every layer but the last
    /// must emit outputs for the whole window.
    pub fn retroactive_counterpart(self) -> Variant {
        match self {
            Variant::CoSi => Variant::CoRe,
            Variant::CoNySiCont => Variant::CoNyReCont,
            Variant::CoNySiFix => Variant::CoNyReFix,
            v => v,
        }
    }

    /// Fixed-landmark variant with the same output mode; its cost is the
    /// non-updated path of a continual-landmark variant.
    pub fn fixed_counterpart(self) -> Option<Variant> {
        match self {
            Variant::CoNySiCont => Some(Variant::CoNySiFix),
            Variant::CoNyReCont => Some(Variant::CoNyReFix),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == key)
            .ok_or(Error::InvalidArgument("unknown attention variant"))
    }
}

/// Variant plus problem size. `m` must be 0 for variants without landmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VariantCost {
    pub variant: Variant,
    pub n: u64,
    pub d: u64,
    pub m: u64,
}

/// Resident elements between steps (valley) and the maximum during a step (peak).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Memory {
    pub valley: u64,
    pub peak: u64,
}

impl VariantCost {
    pub fn new(variant: Variant, n: u64, d: u64, m: u64) -> Result<Self> {
        let c = Self { variant, n, d, m };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::InvalidArgument("cost model needs n >= 1 and d >= 1"));
        }
        if self.variant.is_nystrom() {
            if self.m == 0 || self.m > self.n {
                return Err(Error::InvalidArgument("Nystrom variants need 1 <= m <= n"));
            }
        } else if self.m != 0 {
            return Err(Error::InvalidArgument("m must be 0 for variants without landmarks"));
        }
        Ok(())
    }

    fn with_variant(self, variant: Variant) -> Self {
        Self { variant, ..self }
    }

    /// FLOPs of one step. Continual-landmark variants report the landmark-update path.
    pub fn flops(&self) -> Result<u64> {
        self.validate()?;
        let (n, d, m) = (self.n as i128, self.d as i128, self.m as i128);
        let f = match self.variant {
            Variant::Att => 2 * n * n * d + n * n + n * d + n,
            Variant::Ny => {
                4 * n * d * m + 2 * n * d + n + n * m * m + 2 * n * m + d * m * m + 24 * m * m * m + 22 * m * m + 2 * m
            }
            Variant::NyFix => 4 * n * d * m + n * m * m + 2 * n * m + n + m,
            Variant::CoRe => 7 * n * d + 4 * n - 2 * d - 2,
            Variant::CoSi => 3 * n * d + 2 * n,
            Variant::CoNyReFix => n * d * m + 6 * d * m + m * m + 6 * m,
            Variant::CoNySiFix => 7 * d * m + m * m + 6 * m,
            Variant::CoNyReCont => {
                n * d * m + 8 * n * d + n * m * m + n * m + 11 * n + 15 * d * m + 2 * d + 24 * m * m * m
                    + 22 * m * m
                    + 22 * m
            }
            Variant::CoNySiCont => {
                n * d * m + 3 * n * d + n + 9 * d * m + 2 * d + 24 * m * m * m + 22 * m * m + 13 * m
            }
        };
        to_count(f)
    }

    /// FLOPs of a step that replaces a landmark (continual-landmark variants only).
    pub fn flops_updated(&self) -> Result<u64> {
        self.require_continual_landmarks()?;
        self.flops()
    }

    /// FLOPs of a step that keeps the landmarks (continual-landmark variants only).
    pub fn flops_non_updated(&self) -> Result<u64> {
        let fixed = self.require_continual_landmarks()?;
        self.with_variant(fixed).flops()
    }

    /// Average FLOPs per step when one in every `n/m` steps replaces a landmark.
    ///
    /// Variants without continual landmarks return their plain per-step count.
    pub fn flops_amortized(&self) -> Result<f64> {
        if !self.variant.has_continual_landmarks() {
            return Ok(self.flops()? as f64);
        }
        let period = self.n as f64 / self.m as f64;
        let upd = self.flops_updated()? as f64;
        let non = self.flops_non_updated()? as f64;
        Ok(((period - 1.0) * non + upd) / period)
    }

    fn require_continual_landmarks(&self) -> Result<Variant> {
        self.validate()?;
        self.variant
            .fixed_counterpart()
            .ok_or(Error::InvalidArgument("only continual-landmark variants have update paths"))
    }

    /// Amortized FLOPs per step of a `layers`-deep stack whose last layer is `self`.
    pub fn stacked_flops(&self, layers: u64) -> Result<f64> {
        if layers == 0 {
            return Err(Error::InvalidArgument("a stack needs at least one layer"));
        }
        let inner = self.with_variant(self.variant.retroactive_counterpart());
        Ok((layers - 1) as f64 * inner.flops_amortized()? + self.flops_amortized()?)
    }

    pub fn memory(&self) -> Result<Memory> {
        self.validate()?;
        let (n, d, m) = (self.n as i128, self.d as i128, self.m as i128);
        let (valley, peak) = match self.variant {
            Variant::Att => (3 * (n * d - 1), n * n + 4 * n * d + 1),
            Variant::Ny => (3 * (n * d - 1), 4 * n * d + 2 * n * m + 2 * d * m + 1 + 6 * m * m + m),
            Variant::NyFix => (
                3 * (n * d - 1) + 2 * d * m + m * m,
                4 * n * d + 2 * n * m + 2 * d * m + 2 * m * m + 1,
            ),
            Variant::CoRe => (4 * n * d + n - d - 4, 5 * n * d + 2 * n),
            Variant::CoSi => (2 * (n * d - 1), 2 * n * d + n + 2 * d),
            Variant::CoNyReFix => (
                n * m + 3 * d * m + m * m + m,
                n * d + n * m + 3 * d * m + m * m + 2 * m,
            ),
            Variant::CoNySiFix => (3 * d * m + m * m + m, 3 * d * m + d + m * m + 2 * m),
            Variant::CoNyReCont => (
                3 * n * d + 2 * n * m + 4 * d * m + 2 * m * m - 2 * m - 6,
                4 * n * d + 3 * n * m + 2 * n + 4 * d * m + 7 * m * m + 4 * m,
            ),
            Variant::CoNySiCont => (
                2 * n * d + 4 * d * m + 2 * m * m - 2,
                2 * n * d + n * m + n + 4 * d * m + d + 7 * m * m + 4 * m,
            ),
        };
        Ok(Memory {
            valley: to_count(valley)?,
            peak: to_count(peak)?,
        })
    }
}

fn to_count(x: i128) -> Result<u64> {
    u64::try_from(x).map_err(|_| Error::InvalidArgument("cost formula is negative or overflows for these sizes"))
}

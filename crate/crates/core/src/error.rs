use core::fmt;

/// Errors raised by the attention kernels and continual states.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes do not agree.
    DimensionMismatch {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },
    /// An exponential (or a product of exponentials) left the finite range.
    Overflow {
        op: &'static str,
    },
    /// A row-sum used as a softmax denominator was exactly zero.
    DivisionByZero {
        op: &'static str,
        index: usize,
    },
    /// The iterative pseudo-inverse did not reach the residual bound.
    Convergence {
        residual: f64,
        iterations: usize,
    },
    /// A value supplied to a constructor was NaN or infinite.
    NonFinite {
        index: usize,
    },
    InvalidArgument(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                op,
                expected,
                found,
            } => write!(
                f,
                "{op}: dimension mismatch, expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::Overflow { op } => write!(
                f,
                "{op}: exponential overflowed; pre-scale the inputs so that |q.k|/sqrt(d) stays small"
            ),
            Error::DivisionByZero { op, index } => {
                write!(f, "{op}: zero normalizer at row {index} (underflowed exponentials)")
            }
            Error::Convergence {
                residual,
                iterations,
            } => write!(
                f,
                "pseudo-inverse residual {residual:e} exceeds bound after {iterations} iterations"
            ),
            Error::NonFinite { index } => write!(f, "non-finite value at flat index {index}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

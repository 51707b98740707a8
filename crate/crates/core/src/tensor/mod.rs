//! Dense linear-algebra substrate shared by every attention variant.

mod kernels;
mod matrix;
mod pinv;

pub(crate) use kernels::sqrt_dim;
pub use kernels::{kernel, normalized, phi, rho, rho_row, rho_row_into, row_scale};
pub(crate) use matrix::axpy;
pub use matrix::{rel_frobenius_error, Matrix};
pub use pinv::{pinv_iterative, pinv_residual, CONVERGENCE_BOUND, DEFAULT_PINV_ITERS};

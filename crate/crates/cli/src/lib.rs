//! Verification, benchmarking and cost tables for the continual attention states.

pub mod engine;
pub mod error;
pub mod matrix_csv;
pub mod run;
pub mod stream;
pub mod tables;

pub use error::{CliError, CliResult};

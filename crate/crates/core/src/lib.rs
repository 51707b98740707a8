#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod continual;
pub mod cost;
pub mod error;
pub mod landmarks;
pub mod reference;
pub mod tensor;

pub use error::{Error, Result};
pub use reference::{sda_exact, sda_nystrom, segment_means, segment_sizes, AttentionInput};
pub use tensor::Matrix;

//! Bit-layer multiply-accumulate inference simulator: 8-bit tensors,
//! signed-digit weight recoding, an arithmetic-coded weight format, a
//! streaming convolution engine and the matching cycle and bandwidth model.

pub mod codec;
pub mod engine;
pub mod error;
mod fsutil;
pub mod network;
pub mod perf;
pub mod signed_digit;
pub mod tensor;

pub use error::{Error, Result};
pub use fsutil::write_atomic;

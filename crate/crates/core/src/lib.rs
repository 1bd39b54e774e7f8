//! PowerStep: heavy-ball momentum stepped through a signed power transform,
//! with baseline optimizers, blockwise int8 optimizer-state quantization,
//! test objectives and a verification harness.

pub mod error;
pub mod harness;
pub mod optim;
pub mod oracle;
pub mod power_transform;
pub mod problems;
pub mod quantize;
pub mod rng;

pub use error::{Error, Result};
pub use power_transform::PowerExponent;

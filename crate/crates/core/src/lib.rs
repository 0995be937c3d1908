pub mod allocation;
pub mod cli;
pub mod codebook;
pub mod codec;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod randomness;
pub mod stats;
pub mod synth;
pub mod topology;

pub use error::{Error, Result};

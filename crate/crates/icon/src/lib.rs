//! Standard-library companion to `icon-core`: image and checkpoint files,
//! configuration, the synthetic dataset, and the training, inference and
//! evaluation drivers behind the `icon` binary.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod imageio;
pub mod infer;
pub mod model;
pub mod synth;
pub mod train;

pub use error::{CliError, Result};

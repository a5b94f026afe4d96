//! File formats, experiment orchestration and the `advsal` command line on
//! top of `advsal-core`.

pub mod artifact;
pub mod cli;
pub mod config;
mod error;
pub mod harness;
pub mod spectrogram;
pub mod wav;

pub use error::{Error, Result};

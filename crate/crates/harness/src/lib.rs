//! Two-stage training, evaluation, ablation and weight reports for MDA
//! fusion, driven by the `mda` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod prepare;
pub mod speech;
pub mod train;

pub use config::{ExperimentConfig, FusionKind};
pub use error::{HarnessError, Result};

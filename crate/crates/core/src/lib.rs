//! Modal-domain attention (MDA) multi-modal fusion.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`autodiff`], [`optim`], [`gradcheck`]: a small f64 tensor
//!   library with define-by-run reverse-mode differentiation and Adam.
//! - [`encoders`]: per-modality encoders producing self-attended
//!   token matrices.
//! - [`fusion`]: the continuous cross-modal attention chain, modality
//!   weights, fusion and baseline classifiers.
//! - [`corruption`]: missing-modality and text-noise schedules.
//! - [`data`]: synthetic datasets with an exact Bayes oracle, and
//!   avMNIST-style ingestion.

pub mod autodiff;
pub mod corruption;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod init;
pub mod optim;
pub mod params;
pub mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

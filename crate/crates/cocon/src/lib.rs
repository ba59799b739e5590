//! Cooperative-contrastive learning over multi-view video, desk scale.
//!
//! The crate trains view-specific encoders with a predictive noise-contrastive
//! objective, couples the views with cooperative losses that synchronize
//! cross-instance similarity structure, and evaluates the learned features on
//! a synthetic multi-view benchmark with a linear probe plus an analysis
//! suite (similarity histograms, cross-view class consistency, retrieval,
//! temporal alignment).
//!
//! Module map:
//! - [`tensor`]: reverse-mode autodiff engine (f32 train / f64 gradient checks)
//! - [`losses`]: the contrastive and cooperative loss terms
//! - [`model`]: per-view encoder, recurrent aggregator, future predictor
//! - [`data`]: synthetic multi-view clip generator, block sampler, augmentations
//! - [`training`]: two-phase trainer, plateau schedule, metrics, checkpoints
//! - [`eval`]: linear-probe / fine-tune classification protocol
//! - [`analysis`]: embedding export and qualitative analyses

pub mod analysis;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod tensor;
pub mod training;

pub(crate) mod util;

pub use error::{CoconError, Result};

//! Explainable ordinal image staging at desk scale.
//!
//! The pipeline trains a triplet-regularized convolutional autoencoder, feeds
//! its reconstructions to a small vision transformer classifier, and exports
//! the diagnostics that make the process inspectable: attention rollout maps,
//! perceptual similarity heatmaps between attention maps, and latent-space
//! separability metrics. Everything runs on a built-in f64 reverse-mode
//! autodiff engine; procedurally generated ordinal datasets with a
//! controllable variability knob stand in for clinical data.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod pgm;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};

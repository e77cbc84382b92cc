//! Unsupervised anomaly detection for registered multi-channel volumes.
//!
//! A patch-based siamese auto-encoder learns latent features of normal
//! anatomy. Voxels are then scored by reconstruction error, by an ensemble
//! of one-class SVMs, or by a mixture of multiple-scale t-distributions
//! fitted with online EM in the latent space. Score maps are thresholded
//! at an extreme quantile of normal training scores and summarized per
//! atlas region for subject-level evaluation.

pub mod config;
pub mod container;
pub mod error;
pub mod eval;
pub mod maps;
pub mod mmst;
pub mod nifti;
pub mod ocsvm;
pub mod patching;
pub mod phantom;
pub mod pipeline;
pub mod sae;
pub mod seed;
pub mod volume;

pub use error::{Result, UadError};

//! Evaluation toolkit for retinal vessel segmentation: dataset manifests,
//! resolution harmonization, threshold sweeps, losses, a small pixel
//! classifier and precision-recall plots.

pub mod datasets;
pub mod error;
pub mod gradcheck;
pub mod harmonize;
pub mod imagegrid;
pub mod losses;
pub mod metrics;
pub mod pixelmodel;
pub mod plots;
pub mod reference;

pub use error::{Error, Result};

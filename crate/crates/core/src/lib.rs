//! Paired visible / 660 nm fruit-defect classification.
//!
//! The pipeline stages map onto modules:
//!
//! 1. [`synthgen`] renders paired visible/narrowband captures with
//!    ground-truth defect masks (or [`dataset`] ingests real ones).
//! 2. [`registration`] aligns each narrowband image to its visible partner
//!    with a robust homography and crops to a standard frame.
//! 3. [`maskproc`] filters small connected regions out of defect masks.
//! 4. [`model`] builds single-input and two-branch classifiers over a
//!    pluggable convolutional backbone.
//! 5. [`trainer`] fits a classifier with Adam and cross-entropy.
//! 6. [`evalreport`] runs the experiment matrix and renders accuracy tables.
//!
//! Numeric code is generic over [`Scalar`] (`f32` for training, `f64` for
//! geometry and gradient checks). Concrete aliases live at the crate root.

pub mod dataset;
pub mod error;
pub mod evalreport;
pub mod imaging;
pub mod loader;
pub mod maskproc;
pub mod model;
pub mod pipeline;
pub mod registration;
pub mod scalar;
pub mod seed;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Classifier in single precision, used for training.
pub type Classifier32 = model::Classifier<f32>;
/// Classifier in double precision, used for gradient checks.
pub type Classifier64 = model::Classifier<f64>;
pub type Homography64 = registration::Homography<f64>;
pub type Homography32 = registration::Homography<f32>;
pub type Image32 = imaging::Image<f32>;
pub type Image64 = imaging::Image<f64>;
pub type TensorDataset32 = trainer::TensorDataset<f32>;

/// Version string recorded in run metadata and checkpoints.
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

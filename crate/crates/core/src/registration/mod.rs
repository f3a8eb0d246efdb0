//! Narrowband-to-visible registration: grid NCC matching, robust
//! homography estimation and warping into a standardized frame.

mod batch;
mod homography;
mod matcher;
mod ransac;
mod warp;

use std::path::PathBuf;

use thiserror::Error;

pub use batch::{register_manifest, MatcherKind, RecordRegistration, RegisterOptions, RegistrationReport, RegistrationStatus};
pub use homography::{
    estimate_affine, estimate_homography_dlt, has_collinear_triple, Correspondence, GeomScalar, Homography,
};
pub use matcher::{
    load_sidecar, match_grid, register_pair, register_with_correspondences, save_sidecar, MatcherConfig, Registration,
    RegistrationDiagnostics,
};
pub use ransac::{ransac_homography, RansacOutcome, RansacParams, TransformModel};
pub use warp::{warp_and_crop, warp_to_canvas, STANDARD_SIZE};

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("insufficient correspondences: {found} given, {required} required")]
    InsufficientCorrespondences { found: usize, required: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("RANSAC found no model with at least 4 inliers")]
    NoModelFound,
    #[error("homography is singular")]
    SingularHomography,
    #[error("match failure: {found} patches above the NCC threshold, {required} required")]
    MatchFailure { found: usize, required: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("sidecar {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
}

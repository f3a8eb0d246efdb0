//! Deterministic synthetic paired captures with ground-truth masks.

mod generate;
mod render;
mod scene;
mod spectral;

use std::path::PathBuf;

use thiserror::Error;

pub use generate::{generate_dataset, view_angle, FruitsPerClass, GenConfig, Misalignment};
pub use render::{render_view, render_view_in_frame, RenderMode, RenderSettings, RenderedView, BACKGROUND_LEVEL};
pub use scene::{presets, random_scene, Blob, DefectSpec, FruitScene};
pub use spectral::{
    band_transmission, sample_intensity, ReflectanceCurve, SpectralBand, SpectralChannel, VisibleChannel,
    SPECTRUM_MAX_NM, SPECTRUM_MIN_NM,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spectral band: {0}")]
    InvalidBand(String),
    #[error("invalid reflectance curve: {0}")]
    InvalidCurve(String),
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("output not writable: {path}: {message}")]
    OutputNotWritable { path: PathBuf, message: String },
}

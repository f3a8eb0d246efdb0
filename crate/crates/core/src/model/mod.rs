//! Single- and multi-input classifiers over pluggable conv backbones.

mod backbone;
mod checkpoint;
mod classifier;
pub mod layers;
mod spec;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use backbone::{asset_path, resolve_weights_dir, Backbone, ConvLayout, InputNormalization, WEIGHTS_DIR_ENV};
pub use checkpoint::Archive;
pub use classifier::{
    argmax_rows, build_multi_input, build_single_input, cross_entropy, load_weights, save_weights, Batch, Classifier,
    Gradients, Mode,
};
pub use spec::{BackboneName, BackboneSpec, ClassifierSpec, HeadSpec, InputMode, Pooling};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("pretrained weights for {name} unavailable ({searched})")]
    PretrainedWeightsUnavailable { name: String, searched: String },
    #[error("invalid model spec: {0}")]
    SpecInvalid(String),
    #[error("spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("branch shape mismatch: {0}")]
    BranchShapeMismatch(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl ModelError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ModelError::Io { path: path.to_path_buf(), source }
    }
}

/// Builds a backbone; tiny needs no assets, named networks look in
/// `weights_dir` or the directory named by [`WEIGHTS_DIR_ENV`].
pub fn build_backbone<T: crate::Scalar>(
    spec: &BackboneSpec,
    init_seed: u64,
    weights_dir: Option<&Path>,
) -> Result<Backbone<T>, ModelError> {
    Backbone::build(spec, init_seed, weights_dir)
}

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::evalreport::EvalError;
use crate::imaging::ImageError;
use crate::model::ModelError;
use crate::pipeline::ConfigError;
use crate::registration::RegistrationError;
use crate::synthgen::SynthError;
use crate::trainer::TrainError;

/// Any domain error raised by the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

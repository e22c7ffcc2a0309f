use thiserror::Error;

use sts_core::container::ContainerError;
use sts_core::eval::EvalError;
use sts_core::manifest::ManifestError;
use sts_core::perturb::PerturbError;
use sts_core::signal::SignalError;
use sts_core::tokenize::TokenizeError;
use sts_lm::LmError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no segment {index} in song {song}")]
    UnknownSegment { song: String, index: usize },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("model not loaded: {0}")]
    ModelNotLoaded(String),
    #[error("pitch contour is empty")]
    EmptyPitch,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("unknown phoneme {0:?}")]
    UnknownSymbol(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

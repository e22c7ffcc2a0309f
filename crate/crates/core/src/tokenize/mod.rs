//! Discrete token streams: k-means semantic units, residual-VQ acoustic codes,
//! rounded-F0 pitch tokens and first-codebook reference tokens.

mod kmeans;
mod pitch_tokens;
mod rvq;

use thiserror::Error;

pub use kmeans::{kmeans_encode, kmeans_fit, kmeans_fit_traced, nearest, SemanticCodebook};
pub use pitch_tokens::{pitch_to_tokens, PitchTokens, PitchVocab};
pub use rvq::{extract_reference, rvq_decode, rvq_encode, rvq_encode_traced, rvq_fit, AcousticCodes, RvqCodec};

use crate::container::ContainerError;

/// Semantic unit per frame, in `0..K1`.
pub type SemanticTokens = Vec<u32>;
/// First-codebook acoustic code per frame, in `0..K2`.
pub type ReferenceTokens = Vec<u32>;

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("need at least {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("feature dimension {got} does not match codebook dimension {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("decode depth {depth} exceeds {n_q} stages")]
    DepthOutOfRange { depth: usize, n_q: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

//! Multi-scale decoder-only transformer over patch-aligned token sequences,
//! with a small reverse-mode autodiff engine to train it.

pub mod causal;
pub mod checkpoint;
mod error;
pub mod generate;
pub mod model;
pub mod params;
pub mod sequence;
pub mod tape;
pub mod tensor;
pub mod transformer;
pub mod vocab;

pub use causal::{CausalLm, CausalLmConfig};
pub use error::LmError;
pub use generate::{generate, Generation, SamplingConfig};
pub use model::{LmConfig, MultiScaleModel, Trainer};
pub use params::{Adam, ParamId, ParamStore};
pub use sequence::{build_sequence, parse_sequence, patch_downsample, FlatSequence, ParsedStreams, PatchKind, RegionMap};
pub use tensor::{Mask, Mat};
pub use transformer::{StackConfig, TransformerStack};
pub use vocab::{Special, Vocab};

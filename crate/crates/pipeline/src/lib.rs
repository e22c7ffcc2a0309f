//! Corpus construction, training and inference for speech-to-singing
//! conversion, plus the phoneme-to-semantic translator used for singing
//! synthesis.

pub mod config;
pub mod dataset;
mod error;
pub mod infer;
pub mod reference;
pub mod render;
pub mod t2s;
pub mod toy;
pub mod train;

pub use config::PipelineConfig;
pub use dataset::{build_training_example, Frontend, TokenizedCorpus, Tokenizers, TrainingExample};
pub use error::PipelineError;
pub use infer::{sts_infer, svs_infer, StsModels, Synthesis};
pub use reference::{sample_reference, sample_two_windows};
pub use render::{render_audio, Renderer};
pub use t2s::{train_text_to_semantic, PhonemeSequence, Translator};
pub use train::train_lm;

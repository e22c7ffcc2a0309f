//! Signal processing, information perturbation, discrete tokenizers and
//! objective metrics for a speech-to-singing conversion pipeline.
//!
//! The crate is organised bottom-up:
//!
//! * [`signal`]: waveform I/O, resampling, F0 extraction and spectral features.
//! * [`perturb`]: pseudo random resampling and the pitch/timbre corruption chain.
//! * [`tokenize`]: k-means semantic units, residual VQ acoustic codes, pitch and
//!   reference tokens.
//! * [`eval`]: log-spectral distance and raw chroma accuracy.
//! * [`container`] and [`manifest`]: on-disk formats shared by the tools.

pub mod container;
pub mod eval;
pub mod manifest;
pub mod perturb;
pub mod seed;
pub mod signal;
pub mod tokenize;

pub use signal::{FeatureSequence, PitchContour, Waveform};

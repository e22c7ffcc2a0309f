//! Information perturbation: pseudo random resampling, the pitch/timbre
//! corruption chain and corpus pre-perturbation.

mod corpus;
mod corrupt;
mod eq;
mod formant;
mod pitch_shift;
mod prr;

use thiserror::Error;

pub use corpus::{pre_perturb_corpus, variant_prr_plan, PerturbOptions, PerturbReport};
pub use corrupt::{apply_corruption, corrupt_waveform, sample_corruption, CorruptionConfig, CorruptionParams, EqSpec};
pub use eq::{parametric_eq, sample_eq, Biquad, FilterKind};
pub use formant::formant_shift;
pub use pitch_shift::pitch_randomize;
pub use prr::{
    plan_segments, plan_segments_with_count, prr_continuous, prr_contour, prr_discrete, prr_frames, PrrConfig,
    SegmentPlan,
};

use crate::signal::SignalError;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("invalid sequence length {0}")]
    InvalidLength(usize),
    #[error("plan covers {plan} frames but input has {input}")]
    PlanMismatch { plan: usize, input: usize },
    #[error("invalid filter: {0}")]
    InvalidFilter(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

//! Audio I/O and deterministic DSP primitives.
//!
//! Every operation here is a pure function of its inputs. Frame-producing
//! operations share one timeline convention: frame `t` is centred on sample
//! `t * hop + hop / 2` and a signal of `n` samples yields `n / hop` frames.

mod pitch;
mod resample;
mod spectral;
mod wav;

use ndarray::Array2;
use thiserror::Error;

pub use pitch::{extract_f0, F0Config, F0Extractor};
pub use resample::{linear_resample, linear_resample_frames};
pub use spectral::{
    griffin_lim, istft, log_mel_features, mel_filterbank, stft, stft_log_mag, FeatureExtractor,
    LogMel, MelConfig, Stft, LOG_FLOOR,
};
pub use wav::{load_wav, save_wav};

/// Default sample rate in Hz.
pub const SAMPLE_RATE: u32 = 16_000;
/// Default frame hop in samples (20 ms at 16 kHz).
pub const HOP: usize = 320;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("empty input")]
    EmptyInput,
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Mono audio at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self, SignalError> {
        if sample_rate == 0 {
            return Err(SignalError::InvalidWaveform("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(SignalError::InvalidWaveform(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self { samples: vec![0.0; len], sample_rate }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Number of frames under the shared frame-count contract.
    pub fn num_frames(&self, hop: usize) -> usize {
        self.samples.len() / hop
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let energy: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (energy / self.samples.len() as f64).sqrt()
    }
}

/// A `T x D` matrix of frame features on the shared frame timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub frames: Array2<f32>,
    pub hop: usize,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f32>, hop: usize) -> Self {
        Self { frames, hop }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Per-frame fundamental frequency in Hz; `0.0` marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PitchContour {
    pub f0: Vec<f32>,
    pub hop: usize,
}

impl PitchContour {
    pub fn new(f0: Vec<f32>, hop: usize) -> Self {
        Self { f0, hop }
    }

    pub fn len(&self) -> usize {
        self.f0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f0.is_empty()
    }

    pub fn voiced(&self) -> impl Iterator<Item = f32> + '_ {
        self.f0.iter().copied().filter(|&f| f > 0.0)
    }

    /// Median of the voiced frames, if any.
    pub fn voiced_median(&self) -> Option<f32> {
        let mut v: Vec<f32> = self.voiced().collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.total_cmp(b));
        let mid = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
    }
}

/// Periodic Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Dot product with eight independent accumulators so the loop vectorises.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = acc.iter().sum::<f32>();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Squared Euclidean distance, vectorised like [`dot`].
#[inline]
pub fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    let mut s = acc.iter().sum::<f32>();
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        s += d * d;
    }
    s
}

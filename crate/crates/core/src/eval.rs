//! Objective metrics: log-spectral distance and raw chroma accuracy.

use serde::Serialize;
use thiserror::Error;

use crate::signal::{stft_log_mag, PitchContour, Waveform};

pub const LSD_FFT: usize = 1024;
pub const LSD_HOP: usize = 320;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("reference contour has no voiced frames")]
    NoVoicedFrames,
    #[error("hop mismatch: {0} vs {1}")]
    HopMismatch(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lsd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rca: Option<f64>,
    pub frames: usize,
    pub truncated: bool,
}

/// Mean over frames of the RMS over bins of the log10-magnitude difference.
pub fn lsd(reference: &Waveform, generated: &Waveform) -> Result<f64, EvalError> {
    Ok(lsd_report(reference, generated)?.lsd.unwrap())
}

pub fn lsd_report(reference: &Waveform, generated: &Waveform) -> Result<MetricReport, EvalError> {
    if reference.is_empty() || generated.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let a = stft_log_mag(reference, LSD_FFT, LSD_HOP);
    let b = stft_log_mag(generated, LSD_FFT, LSD_HOP);
    let frames = a.nrows().min(b.nrows());
    if frames == 0 {
        return Err(EvalError::EmptyInput);
    }
    let total: f64 = (0..frames)
        .map(|t| {
            let ms = a.row(t).iter().zip(b.row(t)).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.ncols() as f64;
            ms.sqrt()
        })
        .sum();
    Ok(MetricReport { lsd: Some(total / frames as f64), rca: None, frames, truncated: a.nrows() != b.nrows() })
}

/// Fraction of reference-voiced frames whose generated pitch is within
/// `tolerance_cents` of the reference after folding to the nearest octave.
pub fn rca(reference: &PitchContour, generated: &PitchContour, tolerance_cents: f64) -> Result<f64, EvalError> {
    Ok(rca_report(reference, generated, tolerance_cents)?.rca.unwrap())
}

pub fn rca_report(
    reference: &PitchContour,
    generated: &PitchContour,
    tolerance_cents: f64,
) -> Result<MetricReport, EvalError> {
    if reference.hop != generated.hop {
        return Err(EvalError::HopMismatch(reference.hop, generated.hop));
    }
    let frames = reference.len().min(generated.len());
    let mut voiced = 0usize;
    let mut hits = 0usize;
    for (&r, &g) in reference.f0[..frames].iter().zip(&generated.f0[..frames]) {
        if r <= 0.0 {
            continue;
        }
        voiced += 1;
        if g > 0.0 {
            let cents = 1200.0 * (g as f64 / r as f64).log2();
            let folded = cents - 1200.0 * (cents / 1200.0).round();
            if folded.abs() <= tolerance_cents {
                hits += 1;
            }
        }
    }
    if voiced == 0 {
        return Err(EvalError::NoVoicedFrames);
    }
    Ok(MetricReport {
        lsd: None,
        rca: Some(hits as f64 / voiced as f64),
        frames,
        truncated: reference.len() != generated.len(),
    })
}

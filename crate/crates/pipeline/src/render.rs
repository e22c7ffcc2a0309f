//! Acoustic codes back to audio: decode, invert the mel projection, then
//! iterative phase reconstruction.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use sts_core::signal::{griffin_lim, mel_filterbank, MelConfig, Stft, Waveform, LOG_FLOOR};
use sts_core::tokenize::{rvq_decode, AcousticCodes, RvqCodec};

use crate::PipelineError;

#[derive(Debug, Clone)]
pub struct Renderer {
    mel: MelConfig,
    stft: Stft,
    /// `bins x n_mels`
    pinv: Array2<f64>,
    pub iters: usize,
    pub momentum: f64,
    pub depth: usize,
}

impl Renderer {
    pub fn new(mel: MelConfig, iters: usize, momentum: f64, depth: usize) -> Self {
        let fb = mel_filterbank(&mel);
        let (m, k) = fb.dim();
        let svd = DMatrix::from_fn(m, k, |i, j| fb[[i, j]]).svd(true, true);
        let eps = 1e-8 * svd.singular_values.max();
        let pinv = svd.pseudo_inverse(eps).expect("both factors were requested");
        let pinv = Array2::from_shape_fn((k, m), |(i, j)| pinv[(i, j)]);
        Self { stft: Stft::new(mel.n_fft, mel.hop), mel, pinv, iters, momentum, depth }
    }

    pub fn mel_config(&self) -> &MelConfig {
        &self.mel
    }

    /// Linear magnitude spectrogram (`frames x bins`) of log-mel frames.
    pub fn magnitude(&self, log_mel: ArrayView2<f32>) -> Array2<f64> {
        let power = log_mel.mapv(|v| ((v as f64).exp() - LOG_FLOOR).max(0.0));
        power.dot(&self.pinv.t()).mapv(|p| p.max(0.0).sqrt())
    }

    pub fn render_features(&self, log_mel: ArrayView2<f32>) -> Result<Waveform, PipelineError> {
        let frames = log_mel.nrows();
        if frames == 0 {
            return Err(PipelineError::EmptyInput);
        }
        let mag = self.magnitude(log_mel);
        let len = frames * self.mel.hop;
        let y = griffin_lim(&mag, &self.stft, self.iters, self.momentum, len);
        Ok(Waveform::new(y.iter().map(|&v| v.clamp(-1.0, 1.0) as f32).collect(), self.mel.sample_rate)?)
    }

    pub fn render(&self, codes: &AcousticCodes, codec: &RvqCodec) -> Result<Waveform, PipelineError> {
        let depth = self.depth.min(codes.n_q()).min(codec.n_q());
        let feats = rvq_decode(codes, codec, depth)?;
        self.render_features(feats.view())
    }
}

/// Decodes `codes` at the renderer's depth and reconstructs a waveform.
pub fn render_audio(codes: &AcousticCodes, codec: &RvqCodec, renderer: &Renderer) -> Result<Waveform, PipelineError> {
    renderer.render(codes, codec)
}

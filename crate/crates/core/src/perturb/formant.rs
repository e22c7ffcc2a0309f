use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::PerturbError;
use crate::signal::{Stft, Waveform};

const N_FFT: usize = 1024;
const HOP: usize = 256;
const MIN_LIFTER: usize = 12;
const MAX_LIFTER: usize = 96;
const DEFAULT_LIFTER: usize = 24;

/// Warps the spectral envelope by `ratio` along frequency while keeping the
/// harmonic fine structure (and so the F0) in place.
pub fn formant_shift(x: &Waveform, ratio: f64) -> Result<Waveform, PerturbError> {
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(PerturbError::InvalidConfig(format!("formant ratio {ratio}")));
    }
    if x.is_empty() {
        return Ok(x.clone());
    }
    let stft = Stft::new(N_FFT, HOP);
    let mut spec = stft.analyze(x.samples());
    let fft = FftPlanner::new().plan_fft_forward(N_FFT);
    let bins = N_FFT / 2 + 1;
    let mut buf = vec![Complex64::new(0.0, 0.0); N_FFT];
    let mut env = vec![0.0; bins];
    for mut frame in spec.rows_mut() {
        let logmag: Vec<f64> = frame.iter().map(|c| c.norm().max(1e-10).ln()).collect();
        for k in 0..N_FFT {
            let src = if k < bins { k } else { N_FFT - k };
            buf[k] = Complex64::new(logmag[src], 0.0);
        }
        fft.process(&mut buf);
        let lifter = lifter_for(&buf, x.sample_rate());
        // real, even cepstrum: keep the low quefrencies only
        for (n, c) in buf.iter_mut().enumerate() {
            let q = n.min(N_FFT - n);
            *c = if q < lifter { Complex64::new(c.re / N_FFT as f64, 0.0) } else { Complex64::new(0.0, 0.0) };
        }
        fft.process(&mut buf);
        for (e, c) in env.iter_mut().zip(&buf) {
            *e = c.re;
        }
        for (k, c) in frame.iter_mut().enumerate() {
            let src = (k as f64 / ratio).min((bins - 1) as f64);
            let i = src.floor() as usize;
            let frac = src - i as f64;
            let warped = if i + 1 < bins { env[i] * (1.0 - frac) + env[i + 1] * frac } else { env[bins - 1] };
            *c *= (warped - env[k]).exp();
        }
    }
    let y = stft.synthesize(&spec, x.len());
    Ok(Waveform::new(y.into_iter().map(|v| v as f32).collect(), x.sample_rate())?)
}

/// Cepstral cutoff below the pitch quefrency, so the envelope follows the
/// resonances but not the individual harmonics.
fn lifter_for(cepstrum: &[Complex64], sample_rate: u32) -> usize {
    let lo = (sample_rate as f64 / 1100.0).floor() as usize;
    let hi = ((sample_rate as f64 / 50.0).ceil() as usize).min(N_FFT / 2 - 1);
    let (mut best, mut peak) = (0, 0.0);
    for (q, c) in cepstrum.iter().enumerate().take(hi + 1).skip(lo) {
        if c.re > peak {
            best = q;
            peak = c.re;
        }
    }
    // unscaled transform; a clear pitch peak stands well above the noise
    let floor = cepstrum[lo..=hi].iter().map(|c| c.re.abs()).sum::<f64>() / (hi - lo + 1) as f64;
    if best == 0 || peak < 4.0 * floor {
        return DEFAULT_LIFTER;
    }
    (best / 3).clamp(MIN_LIFTER, MAX_LIFTER)
}

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{PitchContour, SignalError, Waveform, HOP};

/// Autocorrelation F0 extractor settings.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Config {
    pub hop: usize,
    pub f_floor: f64,
    pub f_ceiling: f64,
    /// Analysis window length in seconds.
    pub window_secs: f64,
    /// Minimum normalized autocorrelation for a voiced decision.
    pub voicing_threshold: f64,
    /// A shorter-lag peak is preferred when it reaches this fraction of the
    /// best peak; suppresses octave-down errors.
    pub octave_tolerance: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        Self {
            hop: HOP,
            f_floor: 50.0,
            f_ceiling: 1100.0,
            window_secs: 0.040,
            voicing_threshold: 0.45,
            octave_tolerance: 0.93,
        }
    }
}

/// Normalized-autocorrelation pitch tracker with parabolic peak refinement.
pub struct F0Extractor {
    cfg: F0Config,
    sample_rate: u32,
    window: usize,
    lag_lo: usize,
    lag_hi: usize,
    n_fft: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl F0Extractor {
    pub fn new(cfg: F0Config, sample_rate: u32) -> Result<Self, SignalError> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(cfg.f_floor > 0.0 && cfg.f_floor < cfg.f_ceiling && cfg.f_ceiling < nyquist) {
            return Err(SignalError::InvalidArgument(format!(
                "need 0 < f_floor < f_ceiling < {nyquist}, got {} / {}",
                cfg.f_floor, cfg.f_ceiling
            )));
        }
        if cfg.hop == 0 {
            return Err(SignalError::InvalidArgument("hop must be positive".into()));
        }
        let sr = sample_rate as f64;
        let window = (cfg.window_secs * sr).round().max(8.0) as usize;
        let lag_lo = ((sr / cfg.f_ceiling).floor() as usize).max(2);
        let lag_hi = (sr / cfg.f_floor).ceil() as usize;
        let n_fft = (window + lag_hi + 2).next_power_of_two();
        let mut planner = FftPlanner::new();
        Ok(Self {
            sample_rate,
            window,
            lag_lo,
            lag_hi,
            n_fft,
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
            cfg,
        })
    }

    pub fn config(&self) -> &F0Config {
        &self.cfg
    }

    pub fn extract(&self, x: &Waveform) -> Result<PitchContour, SignalError> {
        if x.sample_rate() != self.sample_rate {
            return Err(SignalError::InvalidArgument(format!(
                "extractor built for {} Hz, got {} Hz",
                self.sample_rate,
                x.sample_rate()
            )));
        }
        let samples = x.samples();
        let frames = samples.len() / self.cfg.hop;
        let span = self.window + self.lag_hi + 2;
        let mut seg = vec![0.0f64; span];
        let mut wbuf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut ybuf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut prefix = vec![0.0f64; span + 1];
        let mut f0 = Vec::with_capacity(frames);
        for t in 0..frames {
            let centre = (t * self.cfg.hop + self.cfg.hop / 2) as isize;
            let start = centre - (self.window / 2) as isize;
            for (i, s) in seg.iter_mut().enumerate() {
                let idx = start + i as isize;
                *s = if idx >= 0 && (idx as usize) < samples.len() { samples[idx as usize] as f64 } else { 0.0 };
            }
            f0.push(self.frame_f0(&seg, &mut wbuf, &mut ybuf, &mut prefix));
        }
        Ok(PitchContour::new(f0, self.cfg.hop))
    }

    fn frame_f0(&self, seg: &[f64], wbuf: &mut [Complex64], ybuf: &mut [Complex64], prefix: &mut [f64]) -> f32 {
        let w = self.window;
        let e0: f64 = seg[..w].iter().map(|v| v * v).sum();
        if e0 <= 1e-12 {
            return 0.0;
        }
        for (i, b) in wbuf.iter_mut().enumerate() {
            *b = Complex64::new(if i < w { seg[i] } else { 0.0 }, 0.0);
        }
        for (i, b) in ybuf.iter_mut().enumerate() {
            *b = Complex64::new(if i < seg.len() { seg[i] } else { 0.0 }, 0.0);
        }
        self.forward.process(wbuf);
        self.forward.process(ybuf);
        for (a, b) in wbuf.iter_mut().zip(ybuf.iter()) {
            *a = a.conj() * b;
        }
        self.inverse.process(wbuf);
        let scale = 1.0 / self.n_fft as f64;

        prefix[0] = 0.0;
        for (i, v) in seg.iter().enumerate() {
            prefix[i + 1] = prefix[i] + v * v;
        }
        let norm_at = |lag: usize| -> f64 {
            let r = wbuf[lag].re * scale;
            let e = prefix[lag + w] - prefix[lag];
            let d = (e0 * e).sqrt();
            if d <= 1e-12 { 0.0 } else { r / d }
        };

        let lo = self.lag_lo;
        let hi = self.lag_hi;
        let values: Vec<f64> = (lo - 1..=hi + 1).map(norm_at).collect();
        let at = |lag: usize| values[lag + 1 - lo];

        let mut peaks: Vec<(usize, f64)> = Vec::new();
        for lag in lo..=hi {
            let v = at(lag);
            if v >= self.cfg.voicing_threshold && v >= at(lag - 1) && v > at(lag + 1) {
                peaks.push((lag, v));
            }
        }
        let Some(&(best_lag, best)) = peaks.iter().max_by(|a, b| a.1.total_cmp(&b.1)) else {
            return 0.0;
        };
        // Shorter lags win only when the best lag is one of their multiples.
        let divides = |lag: usize| {
            let ratio = best_lag as f64 / lag as f64;
            (ratio - ratio.round()).abs() <= 0.08 * ratio.round()
        };
        let (lag, _) = *peaks
            .iter()
            .find(|p| p.1 >= self.cfg.octave_tolerance * best && divides(p.0))
            .expect("best peak qualifies");

        let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
        let freq = self.sample_rate as f64 / (lag as f64 + shift);
        freq.clamp(self.cfg.f_floor, self.cfg.f_ceiling) as f32
    }
}

/// Extracts one F0 value per `hop` frame; unvoiced frames are `0`.
pub fn extract_f0(x: &Waveform, hop: usize, f_floor: f64, f_ceiling: f64) -> Result<PitchContour, SignalError> {
    let cfg = F0Config { hop, f_floor, f_ceiling, ..F0Config::default() };
    F0Extractor::new(cfg, x.sample_rate())?.extract(x)
}

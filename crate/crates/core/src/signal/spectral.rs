use std::sync::Arc;

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{hann, FeatureSequence, Waveform, HOP, SAMPLE_RATE};

/// Floor applied before every logarithm of a magnitude or energy.
pub const LOG_FLOOR: f64 = 1e-10;

/// Short-time Fourier transform on the shared centred frame timeline.
///
/// Frame `t` covers `n_fft` samples centred on `t * hop + hop / 2`; samples
/// outside the signal are zero.
#[derive(Clone)]
pub struct Stft {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("n_fft", &self.n_fft).field("hop", &self.hop).finish()
    }
}

impl Stft {
    pub fn new(n_fft: usize, hop: usize) -> Self {
        assert!(n_fft >= 2 && hop >= 1, "invalid STFT geometry");
        let mut planner = FftPlanner::new();
        Self {
            n_fft,
            hop,
            window: hann(n_fft),
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
        }
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    fn frame_start(&self, t: usize) -> isize {
        (t * self.hop + self.hop / 2) as isize - (self.n_fft / 2) as isize
    }

    /// Complex spectra, one row per frame, `n / hop` rows.
    pub fn analyze(&self, x: &[f32]) -> Array2<Complex64> {
        let frames = x.len() / self.hop;
        let bins = self.n_bins();
        let mut out = Array2::<Complex64>::zeros((frames, bins));
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        for t in 0..frames {
            let start = self.frame_start(t);
            for (i, b) in buf.iter_mut().enumerate() {
                let idx = start + i as isize;
                let s = if idx >= 0 && (idx as usize) < x.len() { x[idx as usize] as f64 } else { 0.0 };
                *b = Complex64::new(s * self.window[i], 0.0);
            }
            self.forward.process(&mut buf);
            for k in 0..bins {
                out[[t, k]] = buf[k];
            }
        }
        out
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`], `len` output samples.
    pub fn synthesize(&self, spec: &Array2<Complex64>, len: usize) -> Vec<f64> {
        let bins = self.n_bins();
        assert_eq!(spec.ncols(), bins, "bin count mismatch");
        let mut out = vec![0.0f64; len];
        let mut norm = vec![0.0f64; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let scale = 1.0 / self.n_fft as f64;
        for t in 0..spec.nrows() {
            for k in 0..bins {
                buf[k] = spec[[t, k]];
            }
            for k in bins..self.n_fft {
                buf[k] = spec[[t, self.n_fft - k]].conj();
            }
            self.inverse.process(&mut buf);
            let start = self.frame_start(t);
            for i in 0..self.n_fft {
                let idx = start + i as isize;
                if idx < 0 || idx as usize >= len {
                    continue;
                }
                let w = self.window[i];
                out[idx as usize] += buf[i].re * scale * w;
                norm[idx as usize] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *o /= n;
            }
        }
        out
    }
}

/// Complex STFT of a waveform.
pub fn stft(x: &Waveform, fft_size: usize, hop: usize) -> Array2<Complex64> {
    Stft::new(fft_size, hop).analyze(x.samples())
}

/// Inverse of [`stft`].
pub fn istft(spec: &Array2<Complex64>, fft_size: usize, hop: usize, len: usize) -> Vec<f64> {
    Stft::new(fft_size, hop).synthesize(spec, len)
}

/// `log10(max(|X|, 1e-10))` of a Hann-windowed STFT; `T x (fft_size/2 + 1)`.
pub fn stft_log_mag(x: &Waveform, fft_size: usize, hop: usize) -> Array2<f64> {
    assert!(fft_size.is_power_of_two() && fft_size >= hop, "fft_size must be a power of two >= hop");
    stft(x, fft_size, hop).mapv(|c| c.norm().max(LOG_FLOOR).log10())
}

/// Mel analysis settings.
#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            n_fft: 1024,
            hop: HOP,
            n_mels: 80,
            f_min: 0.0,
            f_max: SAMPLE_RATE as f64 / 2.0,
        }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `n_mels x (n_fft/2 + 1)`, unit peak height.
pub fn mel_filterbank(cfg: &MelConfig) -> Array2<f64> {
    let bins = cfg.n_fft / 2 + 1;
    let (lo, hi) = (hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max));
    let points: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    Array2::from_shape_fn((cfg.n_mels, bins), |(m, k)| {
        let f = k as f64 * bin_hz;
        let (l, c, r) = (points[m], points[m + 1], points[m + 2]);
        if f <= l || f >= r {
            0.0
        } else if f <= c {
            (f - l) / (c - l)
        } else {
            (r - f) / (r - c)
        }
    })
}

/// Pluggable frame-feature front end. The default is [`LogMel`]; a learned
/// self-supervised encoder can be dropped in behind the same interface.
pub trait FeatureExtractor: Send + Sync {
    fn hop(&self) -> usize;
    fn dim(&self) -> usize;
    fn extract(&self, x: &Waveform) -> FeatureSequence;
}

/// Log-compressed mel filterbank energies.
#[derive(Debug, Clone)]
pub struct LogMel {
    cfg: MelConfig,
    stft: Stft,
    filters: Array2<f64>,
}

impl LogMel {
    pub fn new(cfg: MelConfig) -> Self {
        assert!(cfg.n_mels >= 8, "at least 8 mel bands are required");
        let stft = Stft::new(cfg.n_fft, cfg.hop);
        let filters = mel_filterbank(&cfg);
        Self { cfg, stft, filters }
    }

    pub fn config(&self) -> &MelConfig {
        &self.cfg
    }

    pub fn filters(&self) -> &Array2<f64> {
        &self.filters
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }
}

impl Default for LogMel {
    fn default() -> Self {
        Self::new(MelConfig::default())
    }
}

impl FeatureExtractor for LogMel {
    fn hop(&self) -> usize {
        self.cfg.hop
    }

    fn dim(&self) -> usize {
        self.cfg.n_mels
    }

    fn extract(&self, x: &Waveform) -> FeatureSequence {
        let spec = self.stft.analyze(x.samples());
        let frames = spec.nrows();
        let mut out = Array2::<f32>::zeros((frames, self.cfg.n_mels));
        let mut power = vec![0.0f64; self.stft.n_bins()];
        for t in 0..frames {
            for (p, c) in power.iter_mut().zip(spec.row(t)) {
                *p = c.norm_sqr();
            }
            for m in 0..self.cfg.n_mels {
                let e: f64 = self.filters.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
                out[[t, m]] = (e + LOG_FLOOR).ln() as f32;
            }
        }
        FeatureSequence::new(out, self.cfg.hop)
    }
}

/// Log-mel features with default analysis settings at the given hop and width.
pub fn log_mel_features(x: &Waveform, hop: usize, dim: usize) -> FeatureSequence {
    LogMel::new(MelConfig { sample_rate: x.sample_rate(), hop, n_mels: dim, f_max: x.sample_rate() as f64 / 2.0, ..MelConfig::default() })
        .extract(x)
}

/// Iterative phase reconstruction from a magnitude spectrogram.
///
/// Starts from zero phase and applies the accelerated update with the given
/// `momentum` (0 gives the classic algorithm). Returns `len` samples.
pub fn griffin_lim(magnitude: &Array2<f64>, stft: &Stft, iters: usize, momentum: f64, len: usize) -> Vec<f64> {
    let mut spec = magnitude.mapv(|m| Complex64::new(m, 0.0));
    let mut prev = spec.clone();
    for _ in 0..iters {
        let signal: Vec<f32> = stft.synthesize(&spec, len).iter().map(|&v| v as f32).collect();
        let rebuilt = stft.analyze(&signal);
        let frames = rebuilt.nrows().min(spec.nrows());
        for t in 0..frames {
            for k in 0..spec.ncols() {
                let proj = rebuilt[[t, k]];
                let accel = proj + (proj - prev[[t, k]]) * momentum;
                prev[[t, k]] = proj;
                let norm = accel.norm();
                let phase = if norm > 1e-12 { accel / norm } else { Complex64::new(1.0, 0.0) };
                spec[[t, k]] = phase * magnitude[[t, k]];
            }
        }
    }
    stft.synthesize(&spec, len)
}

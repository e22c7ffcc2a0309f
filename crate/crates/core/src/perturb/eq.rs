use std::f64::consts::PI;

use rand::Rng;

use super::PerturbError;
use crate::signal::Waveform;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    LowShelf,
    HighShelf,
    Peaking,
}

/// A second-order section described by its design parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub kind: FilterKind,
    pub freq_hz: f64,
    pub gain_db: f64,
    pub q: f64,
}

impl Biquad {
    fn validate(&self, sample_rate: u32) -> Result<(), PerturbError> {
        let nyquist = sample_rate as f64 / 2.0;
        let ok = self.freq_hz.is_finite()
            && self.gain_db.is_finite()
            && self.q.is_finite()
            && self.freq_hz > 0.0
            && self.freq_hz < nyquist
            && self.q > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PerturbError::InvalidFilter(format!("{self:?} at {sample_rate} Hz")))
        }
    }

    /// Normalized coefficients `([b0, b1, b2], [a1, a2])` (cookbook formulas).
    pub fn coefficients(&self, sample_rate: u32) -> ([f64; 3], [f64; 2]) {
        let a = 10f64.powf(self.gain_db / 40.0);
        let w0 = 2.0 * PI * self.freq_hz / sample_rate as f64;
        let (sn, cs) = w0.sin_cos();
        let alpha = sn / (2.0 * self.q);
        let sq = 2.0 * a.sqrt() * alpha;
        let (b, den) = match self.kind {
            FilterKind::Peaking => (
                [1.0 + alpha * a, -2.0 * cs, 1.0 - alpha * a],
                [1.0 + alpha / a, -2.0 * cs, 1.0 - alpha / a],
            ),
            FilterKind::LowShelf => (
                [
                    a * ((a + 1.0) - (a - 1.0) * cs + sq),
                    2.0 * a * ((a - 1.0) - (a + 1.0) * cs),
                    a * ((a + 1.0) - (a - 1.0) * cs - sq),
                ],
                [(a + 1.0) + (a - 1.0) * cs + sq, -2.0 * ((a - 1.0) + (a + 1.0) * cs), (a + 1.0) + (a - 1.0) * cs - sq],
            ),
            FilterKind::HighShelf => (
                [
                    a * ((a + 1.0) + (a - 1.0) * cs + sq),
                    -2.0 * a * ((a - 1.0) + (a + 1.0) * cs),
                    a * ((a + 1.0) + (a - 1.0) * cs - sq),
                ],
                [(a + 1.0) - (a - 1.0) * cs + sq, 2.0 * ((a - 1.0) - (a + 1.0) * cs), (a + 1.0) - (a - 1.0) * cs - sq],
            ),
        };
        let a0 = den[0];
        ([b[0] / a0, b[1] / a0, b[2] / a0], [den[1] / a0, den[2] / a0])
    }

    /// Analytic magnitude response `|H(e^{jw})|` at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64, sample_rate: u32) -> f64 {
        let (b, a) = self.coefficients(sample_rate);
        let w = 2.0 * PI * freq_hz / sample_rate as f64;
        let eval = |c0: f64, c1: f64, c2: f64| {
            let re = c0 + c1 * w.cos() + c2 * (2.0 * w).cos();
            let im = -c1 * w.sin() - c2 * (2.0 * w).sin();
            (re * re + im * im).sqrt()
        };
        eval(b[0], b[1], b[2]) / eval(1.0, a[0], a[1])
    }
}

/// Runs the cascade over `x` in order, in double precision.
pub fn parametric_eq(x: &Waveform, filters: &[Biquad]) -> Result<Waveform, PerturbError> {
    let sr = x.sample_rate();
    for f in filters {
        f.validate(sr)?;
    }
    let mut buf: Vec<f64> = x.samples().iter().map(|&s| s as f64).collect();
    for f in filters {
        let (b, a) = f.coefficients(sr);
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in buf.iter_mut() {
            let input = *v;
            let y = b[0] * input + s1;
            s1 = b[1] * input - a[0] * y + s2;
            s2 = b[2] * input - a[1] * y;
            *v = y;
        }
    }
    Ok(Waveform::new(buf.into_iter().map(|v| v as f32).collect(), sr)?)
}

/// One low shelf, one high shelf and `n_peaking` peaking sections with
/// gains, log-uniform frequencies and Q drawn from the given ranges.
pub fn sample_eq(
    rng: &mut impl Rng,
    gain_db: (f64, f64),
    freq_hz: (f64, f64),
    q: (f64, f64),
    n_peaking: usize,
) -> Vec<Biquad> {
    let uni = |rng: &mut dyn rand::RngCore, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.gen::<f64>();
    let kinds = [FilterKind::LowShelf, FilterKind::HighShelf].into_iter().chain(std::iter::repeat(FilterKind::Peaking).take(n_peaking));
    kinds
        .map(|kind| {
            let g = uni(rng, gain_db);
            let f = uni(rng, (freq_hz.0.ln(), freq_hz.1.ln())).exp();
            let qq = uni(rng, q);
            Biquad { kind, freq_hz: f, gain_db: g, q: qq }
        })
        .collect()
}

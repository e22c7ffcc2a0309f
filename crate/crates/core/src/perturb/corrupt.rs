use rand::distributions::Open01;
use rand::Rng;

use super::eq::{parametric_eq, sample_eq, Biquad};
use super::formant::formant_shift;
use super::pitch_shift::pitch_randomize;
use super::PerturbError;
use crate::signal::Waveform;

/// Parameter ranges of the equaliser stage.
#[derive(Debug, Clone, PartialEq)]
pub struct EqSpec {
    pub gain_db: (f64, f64),
    pub freq_hz: (f64, f64),
    pub q: (f64, f64),
    pub n_peaking: usize,
}

impl Default for EqSpec {
    fn default() -> Self {
        Self { gain_db: (-12.0, 12.0), freq_hz: (60.0, 7000.0), q: (0.5, 2.0), n_peaking: 8 }
    }
}

/// Ranges of the pitch/timbre corruption chain. Ratio ranges start at 1;
/// a fair coin inverts each sampled ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionConfig {
    pub fs_ratio_range: (f64, f64),
    pub pr_shift_range: (f64, f64),
    pub pr_range_range: (f64, f64),
    pub eq: EqSpec,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self { fs_ratio_range: (1.0, 1.4), pr_shift_range: (1.0, 2.0), pr_range_range: (1.0, 1.5), eq: EqSpec::default() }
    }
}

impl CorruptionConfig {
    /// Every stage collapsed to its neutral value.
    pub fn identity() -> Self {
        Self {
            fs_ratio_range: (1.0, 1.0),
            pr_shift_range: (1.0, 1.0),
            pr_range_range: (1.0, 1.0),
            eq: EqSpec { gain_db: (0.0, 0.0), ..EqSpec::default() },
        }
    }

    pub fn validate(&self) -> Result<(), PerturbError> {
        for (name, (lo, hi)) in
            [("fs", self.fs_ratio_range), ("pr shift", self.pr_shift_range), ("pr range", self.pr_range_range)]
        {
            if !(lo >= 1.0 && lo <= hi && hi.is_finite()) {
                return Err(PerturbError::InvalidConfig(format!("{name} ratio range ({lo}, {hi})")));
            }
        }
        let e = &self.eq;
        if !(e.gain_db.0 <= e.gain_db.1 && 0.0 < e.freq_hz.0 && e.freq_hz.0 <= e.freq_hz.1 && 0.0 < e.q.0 && e.q.0 <= e.q.1)
        {
            return Err(PerturbError::InvalidConfig(format!("equaliser ranges {e:?}")));
        }
        Ok(())
    }
}

/// One realized draw of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionParams {
    pub eq: Vec<Biquad>,
    pub pr_shift: f64,
    pub pr_range: f64,
    pub fs_ratio: f64,
}

fn ratio(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.sample(Open01);
    let r = lo + (hi - lo) * u;
    if rng.gen_bool(0.5) {
        1.0 / r
    } else {
        r
    }
}

pub fn sample_corruption(cfg: &CorruptionConfig, rng: &mut impl Rng) -> Result<CorruptionParams, PerturbError> {
    cfg.validate()?;
    let eq = sample_eq(rng, cfg.eq.gain_db, cfg.eq.freq_hz, cfg.eq.q, cfg.eq.n_peaking);
    let pr_shift = ratio(rng, cfg.pr_shift_range);
    let pr_range = ratio(rng, cfg.pr_range_range);
    let fs_ratio = ratio(rng, cfg.fs_ratio_range);
    Ok(CorruptionParams { eq, pr_shift, pr_range, fs_ratio })
}

/// Equaliser, then pitch randomization, then formant shifting.
pub fn apply_corruption(y: &Waveform, p: &CorruptionParams) -> Result<Waveform, PerturbError> {
    let x = parametric_eq(y, &p.eq)?;
    let x = pitch_randomize(&x, p.pr_shift, p.pr_range)?;
    formant_shift(&x, p.fs_ratio)
}

pub fn corrupt_waveform(
    y: &Waveform,
    cfg: &CorruptionConfig,
    rng: &mut impl Rng,
) -> Result<(Waveform, CorruptionParams), PerturbError> {
    let params = sample_corruption(cfg, rng)?;
    Ok((apply_corruption(y, &params)?, params))
}

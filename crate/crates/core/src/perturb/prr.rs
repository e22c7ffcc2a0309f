use ndarray::{s, Array2, ArrayView2};
use num_traits::Float;
use rand::Rng;

use super::PerturbError;
use crate::signal::{linear_resample, linear_resample_frames, PitchContour};

#[derive(Debug, Clone, PartialEq)]
pub struct PrrConfig {
    /// Average segment length in frames.
    pub l_r: usize,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for PrrConfig {
    fn default() -> Self {
        Self { l_r: 20, r_min: 0.5, r_max: 1.5 }
    }
}

impl PrrConfig {
    pub fn validate(&self) -> Result<(), PerturbError> {
        if self.l_r == 0 || !(self.r_min > 0.0 && self.r_min <= 1.0 && 1.0 <= self.r_max) {
            return Err(PerturbError::InvalidConfig(format!("bad resampling config {self:?}")));
        }
        Ok(())
    }
}

/// Source and target segment lengths of one resampling draw.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentPlan {
    pub l_src: Vec<usize>,
    pub l_tgt: Vec<usize>,
}

impl SegmentPlan {
    pub fn n(&self) -> usize {
        self.l_src.len()
    }

    pub fn source_len(&self) -> usize {
        self.l_src.iter().sum()
    }

    pub fn target_len(&self) -> usize {
        self.l_tgt.iter().sum()
    }

    /// Maps a source frame position to the target timeline, segment-wise.
    pub fn map_position(&self, src: f64) -> f64 {
        let mut start_s = 0.0;
        let mut start_t = 0.0;
        for (&ls, &lt) in self.l_src.iter().zip(&self.l_tgt) {
            let (ls, lt) = (ls as f64, lt as f64);
            if src < start_s + ls {
                return start_t + (src - start_s) * lt / ls;
            }
            start_s += ls;
            start_t += lt;
        }
        start_t
    }

    fn check(&self, len: usize) -> Result<(), PerturbError> {
        let plan = self.source_len();
        if plan != len {
            return Err(PerturbError::PlanMismatch { plan, input: len });
        }
        Ok(())
    }
}

fn ratios(n: usize, cfg: &PrrConfig, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>() * (cfg.r_max - cfg.r_min) + cfg.r_min).collect()
}

/// Draws a segment plan for a sequence of `t` frames.
pub fn plan_segments(t: usize, cfg: &PrrConfig, rng: &mut impl Rng) -> Result<SegmentPlan, PerturbError> {
    if t < 1 {
        return Err(PerturbError::InvalidLength(t));
    }
    cfg.validate()?;
    let base = (t / cfg.l_r) as i64;
    let n = rng.gen_range(base - 1..base + 2).max(1) as usize;
    Ok(plan_with(t, n.min(t), cfg, rng))
}

/// Like [`plan_segments`] but with the segment count fixed.
pub fn plan_segments_with_count(
    t: usize,
    n: usize,
    cfg: &PrrConfig,
    rng: &mut impl Rng,
) -> Result<SegmentPlan, PerturbError> {
    if t < 1 {
        return Err(PerturbError::InvalidLength(t));
    }
    if n < 1 || n > t {
        return Err(PerturbError::InvalidConfig(format!("segment count {n} for length {t}")));
    }
    cfg.validate()?;
    Ok(plan_with(t, n, cfg, rng))
}

fn plan_with(t: usize, n: usize, cfg: &PrrConfig, rng: &mut impl Rng) -> SegmentPlan {
    let mut r_src = ratios(n, cfg, rng);
    let mean = r_src.iter().sum::<f64>() / n as f64;
    r_src.iter_mut().for_each(|r| *r /= mean);
    let l_src = compensate(&r_src, cfg.l_r, t);
    let l_tgt = ratios(n, cfg, rng).iter().map(|r| ((cfg.l_r as f64 * r).round() as usize).max(1)).collect();
    SegmentPlan { l_src, l_tgt }
}

/// Scales `l_r * r` to cover `t` frames, rounds, gives the residue to the
/// last segment and keeps every segment at least one frame long.
fn compensate(r_src: &[f64], l_r: usize, t: usize) -> Vec<usize> {
    let raw: Vec<f64> = r_src.iter().map(|r| l_r as f64 * r).collect();
    let scale = t as f64 / raw.iter().sum::<f64>();
    let mut l: Vec<i64> = raw.iter().map(|v| (v * scale).round() as i64).collect();
    let last = l.len() - 1;
    l[last] += t as i64 - l.iter().sum::<i64>();
    let mut excess = 0;
    for v in l.iter_mut() {
        if *v < 1 {
            excess += 1 - *v;
            *v = 1;
        }
    }
    while excess > 0 {
        let longest = (0..l.len()).max_by_key(|&i| (l[i], std::cmp::Reverse(i))).expect("non-empty");
        let take = excess.min(l[longest] - 1);
        debug_assert!(take > 0, "n <= t guarantees room");
        l[longest] -= take;
        excess -= take;
    }
    l.into_iter().map(|v| v as usize).collect()
}

/// Linear-interpolation resampling of each segment (continuous variant).
pub fn prr_continuous<T: Float>(x: &[T], plan: &SegmentPlan) -> Result<Vec<T>, PerturbError> {
    plan.check(x.len())?;
    let mut out = Vec::with_capacity(plan.target_len());
    let mut start = 0;
    for (&ls, &lt) in plan.l_src.iter().zip(&plan.l_tgt) {
        out.extend(linear_resample(&x[start..start + ls], lt)?);
        start += ls;
    }
    Ok(out)
}

/// Source index used for output index `i` when stretching `ls` to `lt`.
pub(crate) fn nearest_index(i: usize, ls: usize, lt: usize) -> usize {
    if lt == 1 {
        0
    } else {
        (i as f64 * (ls - 1) as f64 / (lt - 1) as f64).round() as usize
    }
}

/// Nearest-neighbour resampling of each segment (discrete variant).
pub fn prr_discrete<T: Copy>(tokens: &[T], plan: &SegmentPlan) -> Result<Vec<T>, PerturbError> {
    plan.check(tokens.len())?;
    let mut out = Vec::with_capacity(plan.target_len());
    let mut start = 0;
    for (&ls, &lt) in plan.l_src.iter().zip(&plan.l_tgt) {
        out.extend((0..lt).map(|i| tokens[start + nearest_index(i, ls, lt)]));
        start += ls;
    }
    Ok(out)
}

/// Continuous resampling of the rows of a frame matrix.
pub fn prr_frames(x: ArrayView2<f32>, plan: &SegmentPlan) -> Result<Array2<f32>, PerturbError> {
    plan.check(x.nrows())?;
    let mut out = Array2::zeros((plan.target_len(), x.ncols()));
    let (mut s0, mut t0) = (0, 0);
    for (&ls, &lt) in plan.l_src.iter().zip(&plan.l_tgt) {
        let seg = linear_resample_frames(x.slice(s![s0..s0 + ls, ..]), lt)?;
        out.slice_mut(s![t0..t0 + lt, ..]).assign(&seg);
        s0 += ls;
        t0 += lt;
    }
    Ok(out)
}

/// Resamples a pitch contour with the plan. Nearest-neighbour mapping keeps
/// voiced and unvoiced frames from being blended into spurious low pitches.
pub fn prr_contour(c: &PitchContour, plan: &SegmentPlan) -> Result<PitchContour, PerturbError> {
    Ok(PitchContour::new(prr_discrete(&c.f0, plan)?, c.hop))
}

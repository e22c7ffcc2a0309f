//! Autoregressive decoding: one global step, then `P` local steps per patch.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sts_core::tokenize::AcousticCodes;

use crate::model::{Label, MultiScaleModel};
use crate::sequence::PatchKind;
use crate::vocab::Special;
use crate::LmError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// 0 selects the arg-max.
    pub temperature: f64,
    /// 0 keeps every candidate.
    pub top_k: usize,
    pub max_patches: usize,
    /// `[acoustic_end]` is masked until this many frames exist.
    pub min_patches: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { temperature: 0.0, top_k: 0, max_patches: 1000, min_patches: 0, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// `frames x P` acoustic codes.
    pub codes: AcousticCodes,
    /// Stopped at `max_patches` without emitting `[acoustic_end]`.
    pub truncated: bool,
}

pub fn generate(model: &MultiScaleModel, prompt: &crate::FlatSequence, cfg: &SamplingConfig) -> Result<Generation, LmError> {
    if !(cfg.temperature >= 0.0) {
        return Err(LmError::InvalidInput("temperature must be non-negative".into()));
    }
    let v = model.vocab();
    let p = model.cfg.p_patch;
    let start_id = v.special(Special::AcousticStart);
    if prompt.p != p || prompt.ids.len() % p != 0 || prompt.num_patches() == 0 {
        return Err(LmError::InvalidPrompt("prompt is not patch aligned".into()));
    }
    if !prompt.is_prompt() || prompt.patch(prompt.num_patches() - 1).iter().any(|&i| i != start_id) {
        return Err(LmError::InvalidPrompt("prompt must end with the acoustic start separator".into()));
    }
    let start = prompt.num_patches();
    if start + cfg.max_patches > model.cfg.max_positions {
        return Err(LmError::InvalidInput(format!(
            "prompt of {start} patches plus {} frames exceeds the learned positions",
            cfg.max_patches
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache = model.new_global_cache();
    for t in 0..start {
        let prev = (t > 0).then(|| prompt.patch(t - 1));
        model.global_step(
            &mut cache,
            t,
            prev,
            MultiScaleModel::input_label(prompt, t),
            MultiScaleModel::target_label(prompt, t),
        )?;
    }
    let k2 = v.k2;
    let end_head = v.head_special(Special::AcousticEnd);
    let mut frames: Vec<u32> = Vec::new();
    let mut prev_patch: Vec<u32> = prompt.patch(start - 1).to_vec();
    let mut n = 0;
    let mut ended = false;
    while n < cfg.max_patches {
        let t = start + n;
        let input = if n == 0 {
            MultiScaleModel::input_label(prompt, t)
        } else {
            Label { kind: PatchKind::Acoustic, index: n - 1 }
        };
        let hidden = model.global_step(&mut cache, t, Some(&prev_patch), input, Label { kind: PatchKind::Acoustic, index: n })?;
        let mut local = model.new_local_cache();
        let mut patch = Vec::with_capacity(p);
        for tau in 0..p {
            let logits = model.local_step(&mut local, tau, &hidden, patch.last().copied());
            let allow_end = tau == 0 && n >= cfg.min_patches;
            let choice = sample(&logits, |h| h < k2 || (allow_end && h == end_head), cfg, &mut rng);
            if choice == end_head {
                ended = true;
                break;
            }
            patch.push(v.from_head(choice));
        }
        if ended {
            break;
        }
        frames.extend(patch.iter().map(|&id| id - v.acoustic_offset() as u32));
        prev_patch = patch;
        n += 1;
    }
    let codes = Array2::from_shape_vec((n, p), frames).expect("n frames of P codes");
    Ok(Generation { codes: AcousticCodes { codes }, truncated: !ended })
}

/// Picks a head index among the allowed ones.
fn sample(logits: &[f64], allowed: impl Fn(usize) -> bool, cfg: &SamplingConfig, rng: &mut ChaCha8Rng) -> usize {
    let mut cands: Vec<(usize, f64)> = logits.iter().copied().enumerate().filter(|&(i, _)| allowed(i)).collect();
    if cfg.temperature == 0.0 {
        // first maximum wins ties
        return cands.iter().fold(cands[0], |best, &c| if c.1 > best.1 { c } else { best }).0;
    }
    cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if cfg.top_k > 0 {
        cands.truncate(cfg.top_k);
    }
    let max = cands[0].1;
    let weights: Vec<f64> = cands.iter().map(|c| ((c.1 - max) / cfg.temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (c, w) in cands.iter().zip(&weights) {
        if u < *w {
            return c.0;
        }
        u -= w;
    }
    cands.last().unwrap().0
}

//! Training loop of the acoustic language model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sts_core::seed::sub_seed;
use sts_lm::{FlatSequence, MultiScaleModel, Trainer, Vocab};
use tracing::info;

use crate::dataset::TokenizedCorpus;
use crate::{PipelineConfig, PipelineError};

/// Runs up to `steps` optimizer steps on fresh draws from `corpus`.
/// `on_step(step, loss)` returning `false` stops early. Returns the model and
/// the per-step losses.
pub fn train_lm(
    corpus: &TokenizedCorpus,
    model: MultiScaleModel,
    cfg: &PipelineConfig,
    steps: usize,
    seed: u64,
    mut on_step: impl FnMut(usize, f64) -> bool,
) -> Result<(MultiScaleModel, Vec<f64>), PipelineError> {
    if corpus.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let vocab = model.vocab().clone();
    let p = model.cfg.p_patch;
    let mut trainer = Trainer::new(model);
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "train-lm"));
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let batch = (0..cfg.batch_size)
            .map(|_| corpus.sample(cfg, &mut rng)?.to_sequence(&vocab, p))
            .collect::<Result<Vec<_>, _>>()?;
        let loss = if cfg.input_noise > 0.0 {
            let noisy: Vec<_> = batch.into_iter().map(|s| {
                let ids = noisy_inputs(&s, &vocab, cfg.input_noise, &mut rng);
                (s, ids)
            }).collect();
            trainer.train_step_with_inputs(&noisy)?
        } else {
            trainer.train_step(&batch)?
        };
        losses.push(loss);
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            let window = &losses[losses.len().saturating_sub(cfg.log_every)..];
            info!(step = step + 1, loss = window.iter().sum::<f64>() / window.len() as f64, "train-lm");
        }
        if !on_step(step, loss) {
            break;
        }
    }
    Ok((trainer.model, losses))
}

/// Copy of the ids with a `rate` share of acoustic patches replaced by
/// uniformly drawn codes.
fn noisy_inputs(seq: &FlatSequence, vocab: &Vocab, rate: f64, rng: &mut impl Rng) -> Vec<u32> {
    let mut ids = seq.ids.clone();
    let p = seq.p;
    for t in seq.regions.acoustic.clone() {
        if rng.gen_bool(rate) {
            for id in &mut ids[t * p..(t + 1) * p] {
                *id = vocab.acoustic(rng.gen_range(0..vocab.k2 as u32)).expect("code below k2");
            }
        }
    }
    ids
}

//! Phoneme-to-semantic translator for singing synthesis.
//!
//! Layout: `[phonemes, sep, semantic, end]` over one id space: phonemes
//! first, then the separator, the `K1` semantic units and the end marker.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sts_core::seed::sub_seed;
use sts_lm::CausalLm;
use tracing::info;

use crate::{PipelineConfig, PipelineError};

/// Symbols from a declared inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeSequence(pub Vec<String>);

impl PhonemeSequence {
    /// Whitespace-separated symbols; every one must be in `inventory`.
    pub fn parse(text: &str, inventory: &[String]) -> Result<Self, PipelineError> {
        let symbols: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if let Some(bad) = symbols.iter().find(|s| !inventory.contains(s)) {
            return Err(PipelineError::UnknownSymbol(bad.clone()));
        }
        Ok(Self(symbols))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Largest batch drawn per step; smaller corpora train full-batch.
const MAX_BATCH: usize = 16;

pub struct Translator {
    pub lm: CausalLm,
    pub k1: usize,
}

impl Translator {
    pub fn inventory(&self) -> &[String] {
        &self.lm.cfg.symbols
    }

    fn sep(&self) -> u32 {
        self.inventory().len() as u32
    }

    fn semantic_offset(&self) -> u32 {
        self.sep() + 1
    }

    fn end(&self) -> u32 {
        self.semantic_offset() + self.k1 as u32
    }

    fn phoneme_ids(&self, phonemes: &PhonemeSequence) -> Result<Vec<u32>, PipelineError> {
        phonemes
            .0
            .iter()
            .map(|s| {
                self.inventory()
                    .iter()
                    .position(|x| x == s)
                    .map(|i| i as u32)
                    .ok_or_else(|| PipelineError::UnknownSymbol(s.clone()))
            })
            .collect()
    }

    /// Full training sequence and the index of its first semantic position.
    fn encode(&self, phonemes: &PhonemeSequence, semantic: &[u32]) -> Result<(Vec<u32>, usize), PipelineError> {
        let mut ids = self.phoneme_ids(phonemes)?;
        ids.push(self.sep());
        let from = ids.len();
        for &u in semantic {
            if u as usize >= self.k1 {
                return Err(PipelineError::Config(format!("semantic unit {u} outside 0..{}", self.k1)));
            }
            ids.push(self.semantic_offset() + u);
        }
        ids.push(self.end());
        Ok((ids, from))
    }

    /// Greedy semantic tokens for `phonemes`.
    pub fn translate(&self, phonemes: &PhonemeSequence) -> Result<Vec<u32>, PipelineError> {
        if phonemes.is_empty() {
            return Err(PipelineError::EmptyInput);
        }
        let mut prefix = self.phoneme_ids(phonemes)?;
        prefix.push(self.sep());
        let max_new = self.lm.cfg.max_len.saturating_sub(prefix.len());
        let (lo, end) = (self.semantic_offset(), self.end());
        let out = self.lm.generate_greedy(&prefix, end, max_new, |i| i >= lo && i <= end)?;
        Ok(out.into_iter().map(|i| i - lo).collect())
    }

    /// Mean cross-entropy of the semantic region of one pair.
    pub fn loss(&self, phonemes: &PhonemeSequence, semantic: &[u32]) -> Result<f64, PipelineError> {
        let (ids, from) = self.encode(phonemes, semantic)?;
        Ok(self.lm.loss(&ids, from, None)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        Ok(self.lm.save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        if !path.exists() {
            return Err(PipelineError::ModelNotLoaded(path.display().to_string()));
        }
        let lm = CausalLm::load(path)?;
        let k1 = lm
            .cfg
            .vocab_size
            .checked_sub(lm.cfg.symbols.len() + 2)
            .filter(|&k| k > 0)
            .ok_or_else(|| PipelineError::ModelNotLoaded(format!("{}: no phoneme table", path.display())))?;
        Ok(Self { lm, k1 })
    }
}

/// Trains a translator on `(phonemes, semantic tokens)` pairs. `on_step`
/// returning `false` stops early.
pub fn train_text_to_semantic(
    pairs: &[(PhonemeSequence, Vec<u32>)],
    inventory: &[String],
    cfg: &PipelineConfig,
    steps: usize,
    mut on_step: impl FnMut(usize, f64) -> bool,
) -> Result<Translator, PipelineError> {
    if pairs.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let mut lm_cfg = cfg.translator_config(inventory.len() + cfg.k1 + 2);
    lm_cfg.symbols = inventory.to_vec();
    let mut t = Translator { lm: CausalLm::new(lm_cfg)?, k1: cfg.k1 };
    let encoded = pairs.iter().map(|(p, s)| t.encode(p, s)).collect::<Result<Vec<_>, _>>()?;
    let mut opt = t.lm.optimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "train-t2s"));
    for step in 0..steps {
        let batch: Vec<(Vec<u32>, usize)> = if encoded.len() <= MAX_BATCH {
            encoded.clone()
        } else {
            encoded.choose_multiple(&mut rng, MAX_BATCH).cloned().collect()
        };
        let loss = t.lm.train_step(&mut opt, &batch)?;
        if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            info!(step = step + 1, loss, "train-t2s");
        }
        if !on_step(step, loss) {
            break;
        }
    }
    Ok(t)
}

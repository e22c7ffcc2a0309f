//! Plain causal decoder over one token stream, used for the
//! phoneme-to-semantic translator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::params::{Adam, ParamId, ParamStore};
use crate::tape::Tape;
use crate::tensor::{Mask, Mat};
use crate::transformer::{linear_row, StackConfig, TransformerStack};
use crate::LmError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalLmConfig {
    pub vocab_size: usize,
    pub stack: StackConfig,
    pub max_len: usize,
    pub lr: f64,
    pub clip: f64,
    pub seed: u64,
    /// Names of the leading ids, stored with the weights for callers.
    #[serde(default)]
    pub symbols: Vec<String>,
}

impl CausalLmConfig {
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            stack: StackConfig { layers: 4, width: 128, heads: 4, ffn: 512 },
            max_len: 512,
            lr: 3e-4,
            clip: 1.0,
            seed: 0,
            symbols: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CausalLm {
    pub cfg: CausalLmConfig,
    pub store: ParamStore,
    emb: ParamId,
    pos: ParamId,
    head_w: ParamId,
    head_b: ParamId,
    stack: TransformerStack,
}

impl CausalLm {
    pub fn new(cfg: CausalLmConfig) -> Result<Self, LmError> {
        let s = &cfg.stack;
        if cfg.vocab_size == 0 || cfg.max_len == 0 || s.width == 0 || s.heads == 0 || s.width % s.heads != 0 {
            return Err(LmError::Config("translator sizes must be positive and width divisible by heads".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::default();
        let w = s.width;
        store.normal("emb", cfg.vocab_size, w, 0.02, &mut rng);
        store.normal("pos", cfg.max_len, w, 0.02, &mut rng);
        store.normal("head.w", w, cfg.vocab_size, 0.02, &mut rng);
        store.constant("head.b", 1, cfg.vocab_size, 0.0);
        TransformerStack::new(&mut store, "stack", cfg.stack, &mut rng);
        Self::from_parts(cfg, store)
    }

    pub fn from_parts(cfg: CausalLmConfig, store: ParamStore) -> Result<Self, LmError> {
        let missing = || LmError::Checkpoint("tensor names do not match the config".into());
        let find = |n: &str| store.find(n).ok_or_else(missing);
        let (emb, pos, head_w, head_b) = (find("emb")?, find("pos")?, find("head.w")?, find("head.b")?);
        let w = cfg.stack.width;
        let shapes = [(emb, cfg.vocab_size, w), (pos, cfg.max_len, w), (head_w, w, cfg.vocab_size), (head_b, 1, cfg.vocab_size)];
        if shapes.iter().any(|&(id, r, c)| (store.value(id).rows, store.value(id).cols) != (r, c)) {
            return Err(LmError::Checkpoint("tensor shapes do not match the config".into()));
        }
        let stack = TransformerStack::bind(&store, "stack", cfg.stack).ok_or_else(missing)?;
        Ok(Self { cfg, store, emb, pos, head_w, head_b, stack })
    }

    fn check(&self, ids: &[u32]) -> Result<(), LmError> {
        if ids.len() > self.cfg.max_len {
            return Err(LmError::InvalidInput(format!("length {} exceeds {}", ids.len(), self.cfg.max_len)));
        }
        match ids.iter().find(|&&i| i as usize >= self.cfg.vocab_size) {
            Some(&bad) => Err(LmError::VocabOverflow { stream: "translator", value: bad }),
            None => Ok(()),
        }
    }

    /// Mean next-token cross-entropy over targets at positions `>= target_from`.
    /// Adds `scale` times its gradient into `grads` when given.
    pub fn loss(&self, ids: &[u32], target_from: usize, grads: Option<(&mut [Mat], f64)>) -> Result<f64, LmError> {
        self.check(ids)?;
        let n = ids.len();
        let targets: Vec<Option<usize>> =
            (0..n).map(|i| (i + 1 < n && i + 1 >= target_from).then(|| ids[i + 1] as usize)).collect();
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(LmError::InvalidInput("no target positions".into()));
        }
        let mut tape = Tape::new(&self.store);
        let table = tape.param(self.emb);
        let x = tape.gather(table, &ids.iter().map(|&i| i as usize).collect::<Vec<_>>());
        let pos = tape.param(self.pos);
        let pos = tape.gather(pos, &(0..n).collect::<Vec<_>>());
        let x = tape.add(x, pos);
        let h = self.stack.forward(&mut tape, x, Mask::Causal);
        let (w, b) = (tape.param(self.head_w), tape.param(self.head_b));
        let logits = tape.linear(h, w, b);
        let loss = tape.cross_entropy(logits, targets, 1.0 / count as f64);
        let value = tape.value(loss).data[0];
        if !value.is_finite() {
            return Err(LmError::NonFiniteLoss);
        }
        if let Some((grads, scale)) = grads {
            tape.backward_scaled(loss, grads, scale);
        }
        Ok(value)
    }

    /// One optimizer step on the mean loss of `(ids, target_from)` pairs.
    pub fn train_step(&mut self, opt: &mut Adam, batch: &[(Vec<u32>, usize)]) -> Result<f64, LmError> {
        if batch.is_empty() {
            return Err(LmError::InvalidInput("empty batch".into()));
        }
        let mut grads = self.store.zero_grads();
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for (ids, from) in batch {
            total += scale * self.loss(ids, *from, Some((&mut grads, scale)))?;
        }
        opt.update(&mut self.store, &grads);
        Ok(total)
    }

    pub fn optimizer(&self) -> Adam {
        Adam::new(&self.store, self.cfg.lr, self.cfg.clip)
    }

    /// Greedy continuation of `prefix` over the ids accepted by `allowed`,
    /// stopping after `stop` or `max_new` tokens. The stop id is not returned.
    pub fn generate_greedy(
        &self,
        prefix: &[u32],
        stop: u32,
        max_new: usize,
        allowed: impl Fn(u32) -> bool,
    ) -> Result<Vec<u32>, LmError> {
        self.check(prefix)?;
        if prefix.is_empty() {
            return Err(LmError::InvalidPrompt("empty prefix".into()));
        }
        let s = &self.store;
        let mut cache = self.stack.new_cache();
        let mut out = Vec::new();
        let mut last = Vec::new();
        let feed = |cache: &mut _, i: usize, id: u32| -> Result<Vec<f64>, LmError> {
            if i >= self.cfg.max_len {
                return Err(LmError::InvalidInput("generation ran past the maximum length".into()));
            }
            let mut x = s.value(self.emb).row(id as usize).to_vec();
            x.iter_mut().zip(s.value(self.pos).row(i)).for_each(|(a, b)| *a += b);
            let h = self.stack.step(s, cache, &x);
            Ok(linear_row(&Mat::from_vec(1, h.len(), h), s.value(self.head_w), s.value(self.head_b)).data)
        };
        for (i, &id) in prefix.iter().enumerate() {
            last = feed(&mut cache, i, id)?;
        }
        for step in 0..max_new {
            let best = (0..self.cfg.vocab_size as u32)
                .filter(|&i| allowed(i))
                .fold(None::<(u32, f64)>, |b, i| match b {
                    Some((_, v)) if v >= last[i as usize] => b,
                    _ => Some((i, last[i as usize])),
                })
                .ok_or_else(|| LmError::InvalidInput("no allowed tokens".into()))?
                .0;
            if best == stop {
                break;
            }
            out.push(best);
            if step + 1 < max_new {
                last = feed(&mut cache, prefix.len() + out.len() - 1, best)?;
            }
        }
        Ok(out)
    }

    /// Log-probability of `ids[target_from..]` given the preceding tokens.
    pub fn log_likelihood(&self, ids: &[u32], target_from: usize) -> Result<f64, LmError> {
        let n = ids.len();
        let count = (target_from.max(1)..n).count();
        Ok(-self.loss(ids, target_from, None)? * count as f64)
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }
}

//! Global transformer over patches plus a local transformer inside each patch.
//!
//! The global input at patch position `t` is the merged embedding of patch
//! `t - 1` (a learned begin vector at `t = 0`). The local transformer sees
//! `[proj(h_t), a_t^1, .., a_t^{P-1}]` and predicts `a_t^1 .. a_t^P`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::params::{Adam, ParamId, ParamStore};
use crate::sequence::{FlatSequence, PatchKind};
use crate::tape::{Tape, Var};
use crate::tensor::{Mask, Mat};
use crate::transformer::{linear_row, KvCache, StackConfig, TransformerStack};
use crate::vocab::Vocab;
use crate::LmError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub vocab: Vocab,
    pub p_patch: usize,
    pub embed_dim: usize,
    pub global: StackConfig,
    pub local: StackConfig,
    pub max_positions: usize,
    /// Adds region-relative position codes and region-kind embeddings to
    /// the global input.
    pub region_positions: bool,
    pub region_scale: f64,
    pub lr: f64,
    pub clip: f64,
    pub seed: u64,
}

impl LmConfig {
    pub fn desk(vocab: Vocab) -> Self {
        Self {
            vocab,
            p_patch: 3,
            embed_dim: 128,
            global: StackConfig { layers: 4, width: 256, heads: 4, ffn: 1024 },
            local: StackConfig { layers: 2, width: 256, heads: 4, ffn: 1024 },
            max_positions: 2048,
            region_positions: true,
            region_scale: 0.1,
            lr: 3e-4,
            clip: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let bad = |m: &str| Err(LmError::Config(m.to_string()));
        if self.p_patch == 0 || self.embed_dim == 0 || self.max_positions == 0 {
            return bad("patch size, embedding width and max positions must be positive");
        }
        for (name, s) in [("global", &self.global), ("local", &self.local)] {
            if s.width == 0 || s.heads == 0 || s.width % s.heads != 0 || s.ffn == 0 {
                return Err(LmError::Config(format!("{name} width must be a positive multiple of heads")));
            }
        }
        if self.region_positions && self.global.width % 4 != 0 {
            return bad("region positions need a global width divisible by 4");
        }
        if !(self.lr > 0.0) || !(self.clip >= 0.0) {
            return bad("learning rate must be positive and clip non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Label {
    pub kind: PatchKind,
    pub index: usize,
}

const SEP: Label = Label { kind: PatchKind::Separator, index: 0 };

#[derive(Debug, Clone)]
struct Ids {
    tok_emb: ParamId,
    merge_w: ParamId,
    merge_b: ParamId,
    begin: ParamId,
    pos: ParamId,
    kind_in: Option<ParamId>,
    kind_tgt: Option<ParamId>,
    proj_w: ParamId,
    proj_b: ParamId,
    local_emb: ParamId,
    local_pos: ParamId,
    head_w: ParamId,
    head_b: ParamId,
}

const NAMES: [&str; 13] = [
    "tok_emb", "merge.w", "merge.b", "begin", "pos", "kind_in", "kind_tgt", "proj.w", "proj.b", "local_emb",
    "local_pos", "head.w", "head.b",
];

impl Ids {
    fn bind(store: &ParamStore, region: bool) -> Option<Self> {
        let f = |i: usize| store.find(NAMES[i]);
        Some(Self {
            tok_emb: f(0)?,
            merge_w: f(1)?,
            merge_b: f(2)?,
            begin: f(3)?,
            pos: f(4)?,
            kind_in: if region { Some(f(5)?) } else { None },
            kind_tgt: if region { Some(f(6)?) } else { None },
            proj_w: f(7)?,
            proj_b: f(8)?,
            local_emb: f(9)?,
            local_pos: f(10)?,
            head_w: f(11)?,
            head_b: f(12)?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MultiScaleModel {
    pub cfg: LmConfig,
    pub store: ParamStore,
    ids: Ids,
    global: TransformerStack,
    local: TransformerStack,
}

/// Output of one taped pass.
pub struct TapedPass<'a> {
    pub tape: Tape<'a>,
    pub loss: Var,
    pub logits: Var,
    /// Number of scored positions.
    pub count: usize,
    /// Patch index of each block of `P` logit rows.
    pub patches: Vec<usize>,
}

impl MultiScaleModel {
    pub fn new(cfg: LmConfig) -> Result<Self, LmError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut s = ParamStore::default();
        let (e, g, wl, p) = (cfg.embed_dim, cfg.global.width, cfg.local.width, cfg.p_patch);
        let v = cfg.vocab.size();
        let h = cfg.vocab.head_size();
        let std = 0.02;
        s.normal(NAMES[0], v, e, std, &mut rng);
        s.normal(NAMES[1], p * e, g, std, &mut rng);
        s.constant(NAMES[2], 1, g, 0.0);
        s.normal(NAMES[3], 1, g, std, &mut rng);
        s.normal(NAMES[4], cfg.max_positions, g, std, &mut rng);
        if cfg.region_positions {
            s.normal(NAMES[5], PatchKind::COUNT, g, std, &mut rng);
            s.normal(NAMES[6], PatchKind::COUNT, g, std, &mut rng);
        }
        s.normal(NAMES[7], g, wl, std, &mut rng);
        s.constant(NAMES[8], 1, wl, 0.0);
        s.normal(NAMES[9], h + 1, wl, std, &mut rng);
        s.normal(NAMES[10], p, wl, std, &mut rng);
        s.normal(NAMES[11], wl, h, std, &mut rng);
        s.constant(NAMES[12], 1, h, 0.0);
        let global = TransformerStack::new(&mut s, "global", cfg.global, &mut rng);
        let local = TransformerStack::new(&mut s, "local", cfg.local, &mut rng);
        let ids = Ids::bind(&s, cfg.region_positions).expect("parameters just created");
        Ok(Self { cfg, store: s, ids, global, local })
    }

    /// Wraps a parameter store whose names and shapes match `cfg`.
    pub fn from_parts(cfg: LmConfig, store: ParamStore) -> Result<Self, LmError> {
        let reference = Self::new(cfg.clone())?;
        if reference.store.len() != store.len() {
            return Err(LmError::Checkpoint(format!("expected {} tensors, got {}", reference.store.len(), store.len())));
        }
        for id in reference.store.ids() {
            let name = reference.store.name(id);
            let other = store.find(name).ok_or_else(|| LmError::Checkpoint(format!("missing tensor {name}")))?;
            let (a, b) = (reference.store.value(id), store.value(other));
            if (a.rows, a.cols) != (b.rows, b.cols) {
                return Err(LmError::Checkpoint(format!("tensor {name} has shape {}x{}", b.rows, b.cols)));
            }
        }
        let missing = || LmError::Checkpoint("tensor names do not match the config".into());
        let ids = Ids::bind(&store, cfg.region_positions).ok_or_else(missing)?;
        let global = TransformerStack::bind(&store, "global", cfg.global).ok_or_else(missing)?;
        let local = TransformerStack::bind(&store, "local", cfg.local).ok_or_else(missing)?;
        Ok(Self { cfg, store, ids, global, local })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.cfg.vocab
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    fn check(&self, seq: &FlatSequence) -> Result<(), LmError> {
        let p = self.cfg.p_patch;
        if seq.p != p || seq.ids.len() % p != 0 {
            return Err(LmError::NotPatchAligned { len: seq.ids.len(), p });
        }
        if seq.num_patches() > self.cfg.max_positions {
            return Err(LmError::InvalidInput(format!(
                "{} patches exceed the {} learned positions",
                seq.num_patches(),
                self.cfg.max_positions
            )));
        }
        let v = self.cfg.vocab.size() as u32;
        if let Some(&bad) = seq.ids.iter().find(|&&i| i >= v) {
            return Err(LmError::VocabOverflow { stream: "sequence", value: bad });
        }
        Ok(())
    }

    pub(crate) fn input_label(seq: &FlatSequence, t: usize) -> Label {
        if t == 0 {
            return SEP;
        }
        let (kind, index) = seq.patch_info(t - 1);
        Label { kind, index }
    }

    /// The closing separator is labelled as the next acoustic frame so that
    /// generation, which cannot know it is coming, sees the same label.
    pub(crate) fn target_label(seq: &FlatSequence, t: usize) -> Label {
        if seq.regions.acoustic_end == Some(t) {
            return Label { kind: PatchKind::Acoustic, index: t - seq.regions.acoustic.start };
        }
        let (kind, index) = seq.patch_info(t);
        Label { kind, index }
    }

    /// Constant sinusoidal codes of the input and target region indices.
    pub(crate) fn region_code(&self, input: Label, target: Label) -> Vec<f64> {
        let g = self.cfg.global.width;
        let half = g / 2;
        let mut out = vec![0.0; g];
        for (base, idx) in [(0, input.index), (half, target.index)] {
            for i in 0..half / 2 {
                let f = (10000f64).powf(-((2 * i) as f64) / half as f64);
                let a = idx as f64 * f;
                out[base + 2 * i] = self.cfg.region_scale * a.sin();
                out[base + 2 * i + 1] = self.cfg.region_scale * a.cos();
            }
        }
        out
    }

    pub(crate) fn local_index(&self, id: u32) -> usize {
        self.cfg.vocab.head_index(id).unwrap_or(self.cfg.vocab.head_size())
    }

    /// Taped global pass; returns the `N x G` hidden states.
    fn global_taped(&self, tape: &mut Tape, seq: &FlatSequence, input_ids: &[u32]) -> Var {
        let (n, p, e, g) = (seq.num_patches(), self.cfg.p_patch, self.cfg.embed_dim, self.cfg.global.width);
        let ids: Vec<usize> = input_ids.iter().map(|&i| i as usize).collect();
        let table = tape.param(self.ids.tok_emb);
        let emb = tape.gather(table, &ids);
        let cat = tape.reshape(emb, n, p * e);
        let (w, b) = (tape.param(self.ids.merge_w), tape.param(self.ids.merge_b));
        let merged = tape.linear(cat, w, b);
        let begin = tape.param(self.ids.begin);
        let mut map = vec![(0, 0)];
        map.extend((0..n.saturating_sub(1)).map(|t| (1, t)));
        let mut x = tape.select(&[begin, merged], map);
        let pos_table = tape.param(self.ids.pos);
        let pos = tape.gather(pos_table, &(0..n).collect::<Vec<_>>());
        x = tape.add(x, pos);
        if let (Some(kin), Some(ktg)) = (self.ids.kind_in, self.ids.kind_tgt) {
            let labels: Vec<(Label, Label)> =
                (0..n).map(|t| (Self::input_label(seq, t), Self::target_label(seq, t))).collect();
            let mut codes = Mat::zeros(n, g);
            for (t, &(a, b)) in labels.iter().enumerate() {
                codes.row_mut(t).copy_from_slice(&self.region_code(a, b));
            }
            let codes = tape.input(codes);
            x = tape.add(x, codes);
            let kin = tape.param(kin);
            let kin = tape.gather(kin, &labels.iter().map(|l| l.0.kind as usize).collect::<Vec<_>>());
            x = tape.add(x, kin);
            let ktg = tape.param(ktg);
            let ktg = tape.gather(ktg, &labels.iter().map(|l| l.1.kind as usize).collect::<Vec<_>>());
            x = tape.add(x, ktg);
        }
        self.global.forward(tape, x, Mask::Causal)
    }

    /// Taped pass. The local model runs on the scored patches, or on every
    /// patch when `all_patches` is set (targets stay restricted to the
    /// scored patches).
    pub fn forward<'a>(&'a self, seq: &FlatSequence, all_patches: bool) -> Result<TapedPass<'a>, LmError> {
        self.forward_with_targets(seq, &seq.ids, all_patches)
    }

    /// As [`Self::forward`], reading the target ids from `targets` instead of
    /// the input sequence.
    pub fn forward_with_targets<'a>(
        &'a self,
        seq: &FlatSequence,
        targets_ids: &[u32],
        all_patches: bool,
    ) -> Result<TapedPass<'a>, LmError> {
        self.forward_full(seq, &seq.ids, targets_ids, all_patches)
    }

    /// Pass whose global stream reads `global_ids` in place of `seq.ids`.
    /// The local stream and the targets still come from `seq`.
    pub fn forward_with_inputs<'a>(
        &'a self,
        seq: &FlatSequence,
        global_ids: &[u32],
        all_patches: bool,
    ) -> Result<TapedPass<'a>, LmError> {
        self.forward_full(seq, global_ids, &seq.ids, all_patches)
    }

    fn forward_full<'a>(
        &'a self,
        seq: &FlatSequence,
        global_ids: &[u32],
        targets_ids: &[u32],
        all_patches: bool,
    ) -> Result<TapedPass<'a>, LmError> {
        self.check(seq)?;
        if targets_ids.len() != seq.ids.len() || global_ids.len() != seq.ids.len() {
            return Err(LmError::InvalidInput("targets and inputs differ in length".into()));
        }
        let v = self.cfg.vocab.size() as u32;
        if let Some(&bad) = global_ids.iter().find(|&&i| i >= v) {
            return Err(LmError::VocabOverflow { stream: "sequence", value: bad });
        }
        let p = self.cfg.p_patch;
        let n = seq.num_patches();
        let scored = seq.loss_patches();
        let patches: Vec<usize> = if all_patches { (0..n).collect() } else { scored.clone() };
        let mut tape = Tape::new(&self.store);
        let hidden = self.global_taped(&mut tape, seq, global_ids);
        let sel = tape.select(&[hidden], patches.iter().map(|&t| (0, t)).collect());
        let (w, b) = (tape.param(self.ids.proj_w), tape.param(self.ids.proj_b));
        let proj = tape.linear(sel, w, b);
        let mut tok_rows = Vec::with_capacity(patches.len() * (p - 1));
        for &t in &patches {
            tok_rows.extend(seq.patch(t)[..p - 1].iter().map(|&id| self.local_index(id)));
        }
        let local_table = tape.param(self.ids.local_emb);
        let toks = tape.gather(local_table, &tok_rows);
        let mut map = Vec::with_capacity(patches.len() * p);
        for s in 0..patches.len() {
            map.push((0, s));
            map.extend((0..p - 1).map(|j| (1, s * (p - 1) + j)));
        }
        let x = tape.select(&[proj, toks], map);
        let lp = tape.param(self.ids.local_pos);
        let lp = tape.gather(lp, &(0..patches.len() * p).map(|r| r % p).collect::<Vec<_>>());
        let x = tape.add(x, lp);
        let out = self.local.forward(&mut tape, x, Mask::BlockCausal(p));
        let (w, b) = (tape.param(self.ids.head_w), tape.param(self.ids.head_b));
        let logits = tape.linear(out, w, b);
        let mut targets = Vec::with_capacity(patches.len() * p);
        let mut count = 0;
        for &t in &patches {
            let scored_patch = scored.contains(&t);
            for &id in &targets_ids[t * p..(t + 1) * p] {
                let target = if scored_patch { self.cfg.vocab.head_index(id) } else { None };
                count += target.is_some() as usize;
                targets.push(target);
            }
        }
        let scale = if count > 0 { 1.0 / count as f64 } else { 0.0 };
        let loss = tape.cross_entropy(logits, targets, scale);
        Ok(TapedPass { tape, loss, logits, count, patches })
    }

    /// Mean cross-entropy over the scored positions.
    pub fn loss(&self, seq: &FlatSequence) -> Result<f64, LmError> {
        let pass = self.forward(seq, false)?;
        if pass.count == 0 {
            return Err(LmError::InvalidInput("sequence has no scored positions".into()));
        }
        Ok(pass.tape.value(pass.loss).data[0])
    }

    /// Adds `scale * d loss / d params` into `grads` and returns the loss.
    pub fn accumulate_grad(&self, seq: &FlatSequence, grads: &mut [Mat], scale: f64) -> Result<f64, LmError> {
        self.accumulate_grad_with_inputs(seq, &seq.ids, grads, scale)
    }

    /// As [`Self::accumulate_grad`] with the global stream reading `global_ids`.
    pub fn accumulate_grad_with_inputs(
        &self,
        seq: &FlatSequence,
        global_ids: &[u32],
        grads: &mut [Mat],
        scale: f64,
    ) -> Result<f64, LmError> {
        let mut pass = self.forward_with_inputs(seq, global_ids, false)?;
        if pass.count == 0 {
            return Err(LmError::InvalidInput("sequence has no scored positions".into()));
        }
        let loss = pass.tape.value(pass.loss).data[0];
        if !loss.is_finite() {
            return Err(LmError::NonFiniteLoss);
        }
        let loss_var = pass.loss;
        pass.tape.backward_scaled(loss_var, grads, scale);
        Ok(loss)
    }

    /// Logits of every position, `(N * P) x head`.
    pub fn logits(&self, seq: &FlatSequence) -> Result<Mat, LmError> {
        let pass = self.forward(seq, true)?;
        Ok(pass.tape.value(pass.logits).clone())
    }

    /// Global hidden states, `N x G`.
    pub fn global_hidden(&self, seq: &FlatSequence) -> Result<Mat, LmError> {
        self.check(seq)?;
        let mut tape = Tape::new(&self.store);
        let h = self.global_taped(&mut tape, seq, &seq.ids);
        Ok(tape.value(h).clone())
    }

    pub(crate) fn new_global_cache(&self) -> KvCache {
        self.global.new_cache()
    }

    /// One incremental global step at position `t`.
    pub(crate) fn global_step(
        &self,
        cache: &mut KvCache,
        t: usize,
        prev_patch: Option<&[u32]>,
        input: Label,
        target: Label,
    ) -> Result<Vec<f64>, LmError> {
        if t >= self.cfg.max_positions {
            return Err(LmError::InvalidInput(format!("position {t} exceeds the learned positions")));
        }
        let s = &self.store;
        let mut x = match prev_patch {
            None => s.value(self.ids.begin).clone(),
            Some(ids) => {
                let table = s.value(self.ids.tok_emb);
                let cat: Vec<f64> = ids.iter().flat_map(|&i| table.row(i as usize).iter().copied()).collect();
                linear_row(&Mat::from_vec(1, cat.len(), cat), s.value(self.ids.merge_w), s.value(self.ids.merge_b))
            }
        };
        add(&mut x.data, s.value(self.ids.pos).row(t));
        if let (Some(kin), Some(ktg)) = (self.ids.kind_in, self.ids.kind_tgt) {
            add(&mut x.data, &self.region_code(input, target));
            add(&mut x.data, s.value(kin).row(input.kind as usize));
            add(&mut x.data, s.value(ktg).row(target.kind as usize));
        }
        Ok(self.global.step(s, cache, &x.data))
    }

    pub(crate) fn new_local_cache(&self) -> KvCache {
        self.local.new_cache()
    }

    /// One incremental local step at within-patch position `tau` (0-based);
    /// `input` is `h_t` at `tau = 0` and is ignored afterwards in favour of
    /// the previous token. Returns head logits.
    pub(crate) fn local_step(&self, cache: &mut KvCache, tau: usize, hidden: &[f64], prev: Option<u32>) -> Vec<f64> {
        let s = &self.store;
        let mut x = match prev {
            None => linear_row(&Mat::from_vec(1, hidden.len(), hidden.to_vec()), s.value(self.ids.proj_w), s.value(self.ids.proj_b))
                .data,
            Some(id) => s.value(self.ids.local_emb).row(self.local_index(id)).to_vec(),
        };
        add(&mut x, s.value(self.ids.local_pos).row(tau));
        let out = self.local.step(s, cache, &x);
        linear_row(&Mat::from_vec(1, out.len(), out), s.value(self.ids.head_w), s.value(self.ids.head_b)).data
    }

    /// Sum of log-probabilities of the scored targets, computed one position
    /// at a time with cached keys and values.
    pub fn score_incremental(&self, seq: &FlatSequence) -> Result<f64, LmError> {
        self.check(seq)?;
        let p = self.cfg.p_patch;
        let scored = seq.loss_patches();
        let mut cache = self.new_global_cache();
        let mut total = 0.0;
        for t in 0..seq.num_patches() {
            let prev = (t > 0).then(|| seq.patch(t - 1));
            let h = self.global_step(&mut cache, t, prev, Self::input_label(seq, t), Self::target_label(seq, t))?;
            if !scored.contains(&t) {
                continue;
            }
            let patch = seq.patch(t);
            let mut local = self.new_local_cache();
            for tau in 0..p {
                let logits = self.local_step(&mut local, tau, &h, (tau > 0).then(|| patch[tau - 1]));
                let target = self.cfg.vocab.head_index(patch[tau]).expect("scored ids are in the head");
                total += log_softmax_at(&logits, target);
            }
        }
        Ok(total)
    }
}

fn add(a: &mut [f64], b: &[f64]) {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
}

pub(crate) fn log_softmax_at(logits: &[f64], i: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits[i] - lse
}

/// Model plus optimizer state.
pub struct Trainer {
    pub model: MultiScaleModel,
    pub opt: Adam,
}

impl Trainer {
    pub fn new(model: MultiScaleModel) -> Self {
        let opt = Adam::new(&model.store, model.cfg.lr, model.cfg.clip);
        Self { model, opt }
    }

    /// One optimizer step on the mean loss of `batch`. Returns the loss;
    /// parameters are untouched when it is not finite.
    pub fn train_step(&mut self, batch: &[FlatSequence]) -> Result<f64, LmError> {
        let batch: Vec<(&FlatSequence, &[u32])> = batch.iter().map(|s| (s, &s.ids[..])).collect();
        self.step(&batch)
    }

    /// As [`Self::train_step`] with a separate global input per sequence.
    pub fn train_step_with_inputs(&mut self, batch: &[(FlatSequence, Vec<u32>)]) -> Result<f64, LmError> {
        let batch: Vec<(&FlatSequence, &[u32])> = batch.iter().map(|(s, g)| (s, &g[..])).collect();
        self.step(&batch)
    }

    fn step(&mut self, batch: &[(&FlatSequence, &[u32])]) -> Result<f64, LmError> {
        if batch.is_empty() {
            return Err(LmError::InvalidInput("empty batch".into()));
        }
        let mut grads = self.model.store.zero_grads();
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &(seq, global_ids) in batch {
            loss += scale * self.model.accumulate_grad_with_inputs(seq, global_ids, &mut grads, scale)?;
        }
        if !loss.is_finite() || !Adam::grad_norm(&grads).is_finite() {
            return Err(LmError::NonFiniteLoss);
        }
        self.opt.update(&mut self.model.store, &grads);
        Ok(loss)
    }
}

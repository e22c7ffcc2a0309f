//! Pre-norm transformer blocks with a taped forward and a cached
//! single-row step that share the same kernels.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::{attend_row, gelu, gemm, layer_norm, Mask, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn: usize,
}

#[derive(Debug, Clone)]
struct Layer {
    ln1_g: ParamId,
    ln1_b: ParamId,
    w_qkv: ParamId,
    b_qkv: ParamId,
    w_o: ParamId,
    b_o: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct TransformerStack {
    pub cfg: StackConfig,
    layers: Vec<Layer>,
    lnf_g: ParamId,
    lnf_b: ParamId,
}

/// Keys and values of every processed row, per layer (`rows x width`).
#[derive(Debug, Clone, Default)]
pub struct KvCache {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    rows: usize,
}

impl KvCache {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

impl TransformerStack {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: StackConfig, rng: &mut impl Rng) -> Self {
        assert!(cfg.width % cfg.heads == 0, "width must divide into heads");
        let (w, f) = (cfg.width, cfg.ffn);
        let std = 0.02;
        let out_std = std / (2.0 * cfg.layers.max(1) as f64).sqrt();
        let layers = (0..cfg.layers)
            .map(|i| {
                let p = |n: &str| format!("{prefix}.{i}.{n}");
                Layer {
                    ln1_g: store.constant(&p("ln1.g"), 1, w, 1.0),
                    ln1_b: store.constant(&p("ln1.b"), 1, w, 0.0),
                    w_qkv: store.normal(&p("attn.qkv.w"), w, 3 * w, std, rng),
                    b_qkv: store.constant(&p("attn.qkv.b"), 1, 3 * w, 0.0),
                    w_o: store.normal(&p("attn.out.w"), w, w, out_std, rng),
                    b_o: store.constant(&p("attn.out.b"), 1, w, 0.0),
                    ln2_g: store.constant(&p("ln2.g"), 1, w, 1.0),
                    ln2_b: store.constant(&p("ln2.b"), 1, w, 0.0),
                    w1: store.normal(&p("ffn.w1"), w, f, std, rng),
                    b1: store.constant(&p("ffn.b1"), 1, f, 0.0),
                    w2: store.normal(&p("ffn.w2"), f, w, out_std, rng),
                    b2: store.constant(&p("ffn.b2"), 1, w, 0.0),
                }
            })
            .collect();
        let lnf_g = store.constant(&format!("{prefix}.lnf.g"), 1, w, 1.0);
        let lnf_b = store.constant(&format!("{prefix}.lnf.b"), 1, w, 0.0);
        Self { cfg, layers, lnf_g, lnf_b }
    }

    /// Rebinds parameter ids by name, for a store loaded from disk.
    pub fn bind(store: &ParamStore, prefix: &str, cfg: StackConfig) -> Option<Self> {
        let layers = (0..cfg.layers)
            .map(|i| {
                let p = |n: &str| store.find(&format!("{prefix}.{i}.{n}"));
                Some(Layer {
                    ln1_g: p("ln1.g")?,
                    ln1_b: p("ln1.b")?,
                    w_qkv: p("attn.qkv.w")?,
                    b_qkv: p("attn.qkv.b")?,
                    w_o: p("attn.out.w")?,
                    b_o: p("attn.out.b")?,
                    ln2_g: p("ln2.g")?,
                    ln2_b: p("ln2.b")?,
                    w1: p("ffn.w1")?,
                    b1: p("ffn.b1")?,
                    w2: p("ffn.w2")?,
                    b2: p("ffn.b2")?,
                })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Self {
            cfg,
            layers,
            lnf_g: store.find(&format!("{prefix}.lnf.g"))?,
            lnf_b: store.find(&format!("{prefix}.lnf.b"))?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, mask: Mask) -> Var {
        let mut h = x;
        for l in &self.layers {
            let (g, b) = (tape.param(l.ln1_g), tape.param(l.ln1_b));
            let n = tape.layer_norm(h, g, b);
            let (w, bq) = (tape.param(l.w_qkv), tape.param(l.b_qkv));
            let qkv = tape.linear(n, w, bq);
            let a = tape.attention(qkv, self.cfg.heads, mask);
            let (wo, bo) = (tape.param(l.w_o), tape.param(l.b_o));
            let a = tape.linear(a, wo, bo);
            h = tape.add(h, a);
            let (g, b) = (tape.param(l.ln2_g), tape.param(l.ln2_b));
            let n = tape.layer_norm(h, g, b);
            let (w1, b1) = (tape.param(l.w1), tape.param(l.b1));
            let f = tape.linear(n, w1, b1);
            let f = tape.gelu(f);
            let (w2, b2) = (tape.param(l.w2), tape.param(l.b2));
            let f = tape.linear(f, w2, b2);
            h = tape.add(h, f);
        }
        let (g, b) = (tape.param(self.lnf_g), tape.param(self.lnf_b));
        tape.layer_norm(h, g, b)
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache { k: vec![Vec::new(); self.layers.len()], v: vec![Vec::new(); self.layers.len()], rows: 0 }
    }

    /// Processes one more row, attending to every cached row.
    pub fn step(&self, store: &ParamStore, cache: &mut KvCache, x: &[f64]) -> Vec<f64> {
        let w = self.cfg.width;
        let heads = self.cfg.heads;
        let d = w / heads;
        let mut h = Mat::from_vec(1, w, x.to_vec());
        let row = cache.rows;
        let mut probs = Vec::new();
        let mut head_out = vec![0.0; d];
        for (li, l) in self.layers.iter().enumerate() {
            let (n, _, _) = layer_norm(&h, &store.value(l.ln1_g).data, &store.value(l.ln1_b).data);
            let qkv = linear_row(&n, store.value(l.w_qkv), store.value(l.b_qkv));
            cache.k[li].extend_from_slice(&qkv.data[w..2 * w]);
            cache.v[li].extend_from_slice(&qkv.data[2 * w..]);
            let mut att = Mat::zeros(1, w);
            for hd in 0..heads {
                let q = &qkv.data[hd * d..hd * d + d];
                attend_row(q, &cache.k[li], &cache.v[li], w, hd * d, d, 0, row, &mut probs, &mut head_out);
                att.data[hd * d..hd * d + d].copy_from_slice(&head_out);
            }
            let a = linear_row(&att, store.value(l.w_o), store.value(l.b_o));
            h.add_assign(&a);
            let (n, _, _) = layer_norm(&h, &store.value(l.ln2_g).data, &store.value(l.ln2_b).data);
            let mut f = linear_row(&n, store.value(l.w1), store.value(l.b1));
            f.data.iter_mut().for_each(|v| *v = gelu(*v));
            let f = linear_row(&f, store.value(l.w2), store.value(l.b2));
            h.add_assign(&f);
        }
        cache.rows += 1;
        let (out, _, _) = layer_norm(&h, &store.value(self.lnf_g).data, &store.value(self.lnf_b).data);
        out.data
    }
}

/// `x W + b` for plain matrices.
pub fn linear_row(x: &Mat, w: &Mat, b: &Mat) -> Mat {
    let mut y = Mat::zeros(x.rows, w.cols);
    gemm(x, false, w, false, &mut y, 1.0, 0.0);
    for i in 0..y.rows {
        y.row_mut(i).iter_mut().zip(&b.data).for_each(|(v, bb)| *v += bb);
    }
    y
}

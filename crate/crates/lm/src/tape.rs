//! Reverse-mode automatic differentiation over [`Mat`] values.

use crate::params::{ParamId, ParamStore};
use crate::tensor::{attend_row, gelu, gelu_grad, gemm, layer_norm, softmax_in_place, Mask, Mat};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Mat, inv_std: Vec<f64> },
    Gather { table: Var, ids: Vec<usize> },
    Select { inputs: Vec<Var>, map: Vec<(usize, usize)> },
    Reshape(Var),
    Attention { qkv: Var, heads: usize, mask: Mask, probs: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<Option<usize>>, scale: f64, probs: Mat },
}

struct Node {
    op: Op,
    value: Option<Mat>,
}

/// Records one forward pass so that it can be differentiated.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    grads: Vec<Option<Mat>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self { params, nodes: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Option<Mat>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        match (&self.nodes[v.0].op, &self.nodes[v.0].value) {
            (Op::Param(id), _) => self.params.value(*id),
            (_, Some(m)) => m,
            _ => unreachable!("every non-parameter node stores its value"),
        }
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(Op::Input, Some(m))
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (x, w) = (self.value(a), self.value(b));
        let mut c = Mat::zeros(x.rows, w.cols);
        gemm(x, false, w, false, &mut c, 1.0, 0.0);
        self.push(Op::MatMul(a, b), Some(c))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut c = self.value(a).clone();
        c.add_assign(self.value(b));
        self.push(Op::Add(a, b), Some(c))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let mut c = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((r.rows, r.cols), (1, c.cols));
        for i in 0..c.rows {
            c.row_mut(i).iter_mut().zip(&r.data).for_each(|(x, b)| *x += b);
        }
        self.push(Op::AddRow(a, row), Some(c))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let y = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|&v| gelu(v)).collect());
        self.push(Op::Gelu(a), Some(y))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (y, xhat, inv_std) = layer_norm(self.value(x), &self.value(gamma).data, &self.value(beta).data);
        self.push(Op::LayerNorm { x, gamma, beta, xhat, inv_std }, Some(y))
    }

    /// Rows `ids` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros(ids.len(), t.cols);
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(Op::Gather { table, ids: ids.to_vec() }, Some(out))
    }

    /// Builds a matrix whose row `i` is row `map[i].1` of `inputs[map[i].0]`.
    pub fn select(&mut self, inputs: &[Var], map: Vec<(usize, usize)>) -> Var {
        let cols = self.value(inputs[0]).cols;
        let mut out = Mat::zeros(map.len(), cols);
        for (i, &(s, r)) in map.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.value(inputs[s]).row(r));
        }
        self.push(Op::Select { inputs: inputs.to_vec(), map }, Some(out))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let m = self.value(a).clone().reshape(rows, cols);
        self.push(Op::Reshape(a), Some(m))
    }

    /// Multi-head attention over a packed `L x 3W` projection `[Q | K | V]`.
    pub fn attention(&mut self, qkv: Var, heads: usize, mask: Mask) -> Var {
        let x = self.value(qkv);
        let (l, w) = (x.rows, x.cols / 3);
        let d = w / heads;
        let mut out = Mat::zeros(l, w);
        let mut probs = Vec::new();
        let mut p = Vec::new();
        let mut head_out = vec![0.0; d];
        for h in 0..heads {
            for i in 0..l {
                let lo = mask.first_key(i);
                let q = &x.data[i * 3 * w + h * d..i * 3 * w + h * d + d];
                attend_row(q, &x.data[w..], &x.data[2 * w..], 3 * w, h * d, d, lo, i, &mut p, &mut head_out);
                out.row_mut(i)[h * d..h * d + d].copy_from_slice(&head_out);
                probs.extend_from_slice(&p);
            }
        }
        self.push(Op::Attention { qkv, heads, mask, probs }, Some(out))
    }

    /// Sum of `scale * -log softmax(logits)[target]` over rows with a target.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<usize>>, scale: f64) -> Var {
        let x = self.value(logits);
        assert_eq!(x.rows, targets.len());
        let mut probs = x.clone();
        let mut loss = 0.0;
        for (i, t) in targets.iter().enumerate() {
            let row = probs.row_mut(i);
            softmax_in_place(row);
            if let Some(t) = *t {
                // log-sum-exp form keeps tiny probabilities accurate
                let xr = x.row(i);
                let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + xr.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                loss += scale * (lse - xr[t]);
            }
        }
        self.push(Op::CrossEntropy { logits, targets, scale, probs }, Some(Mat::from_vec(1, 1, vec![loss])))
    }

    /// Gradient of the last backward pass with respect to `v`, if it was reached.
    pub fn grad(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn acc_with(grads: &mut [Option<Mat>], v: Var, rows: usize, cols: usize, f: impl FnOnce(&mut Mat)) {
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Mat::zeros(rows, cols));
        }
        f(slot.as_mut().unwrap());
    }

    /// Back-propagates from the scalar `loss` and adds parameter gradients
    /// into `param_grads` (indexed by parameter id).
    pub fn backward(&mut self, loss: Var, param_grads: &mut [Mat]) {
        self.backward_scaled(loss, param_grads, 1.0)
    }

    /// As [`Self::backward`] for `seed * loss`.
    pub fn backward_scaled(&mut self, loss: Var, param_grads: &mut [Mat], seed: f64) {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![seed]));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(id) => param_grads[id.0].add_assign(&g),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (ar, ac, br, bc) = (av.rows, av.cols, bv.rows, bv.cols);
                    Self::acc_with(&mut grads, *a, ar, ac, |ga| gemm(&g, false, bv, true, ga, 1.0, 1.0));
                    Self::acc_with(&mut grads, *b, br, bc, |gb| gemm(av, true, &g, false, gb, 1.0, 1.0));
                }
                Op::Add(a, b) => {
                    Self::acc(&mut grads, *b, g.clone());
                    Self::acc(&mut grads, *a, g.clone());
                }
                Op::AddRow(a, r) => {
                    let mut gr = Mat::zeros(1, g.cols);
                    for i in 0..g.rows {
                        gr.data.iter_mut().zip(g.row(i)).for_each(|(s, v)| *s += v);
                    }
                    Self::acc(&mut grads, *r, gr);
                    Self::acc(&mut grads, *a, g.clone());
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let d = Mat::from_vec(
                        x.rows,
                        x.cols,
                        x.data.iter().zip(&g.data).map(|(&xv, &gv)| gv * gelu_grad(xv)).collect(),
                    );
                    Self::acc(&mut grads, *a, d);
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gam = &self.value(*gamma).data;
                    let (rows, cols) = (g.rows, g.cols);
                    let mut dgamma = Mat::zeros(1, cols);
                    let mut dbeta = Mat::zeros(1, cols);
                    let mut dx = Mat::zeros(rows, cols);
                    let n = cols as f64;
                    for i in 0..rows {
                        let gr = g.row(i);
                        let xh = xhat.row(i);
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..cols {
                            dgamma.data[j] += gr[j] * xh[j];
                            dbeta.data[j] += gr[j];
                            let dxh = gr[j] * gam[j];
                            mean_d += dxh;
                            mean_dx += dxh * xh[j];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        let out = dx.row_mut(i);
                        for j in 0..cols {
                            out[j] = inv_std[i] * (gr[j] * gam[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    Self::acc(&mut grads, *gamma, dgamma);
                    Self::acc(&mut grads, *beta, dbeta);
                    Self::acc(&mut grads, *x, dx);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let (tr, tc) = (t.rows, t.cols);
                    if let Op::Param(id) = self.nodes[table.0].op {
                        // scatter straight into the parameter gradient
                        let pg = &mut param_grads[id.0];
                        for (i, &row) in ids.iter().enumerate() {
                            pg.row_mut(row).iter_mut().zip(g.row(i)).for_each(|(s, v)| *s += v);
                        }
                    } else {
                        Self::acc_with(&mut grads, *table, tr, tc, |gt| {
                            for (i, &row) in ids.iter().enumerate() {
                                gt.row_mut(row).iter_mut().zip(g.row(i)).for_each(|(s, v)| *s += v);
                            }
                        });
                    }
                }
                Op::Select { inputs, map } => {
                    for (s, input) in inputs.iter().enumerate() {
                        let v = self.value(*input);
                        let (r, c) = (v.rows, v.cols);
                        Self::acc_with(&mut grads, *input, r, c, |gi| {
                            for (i, &(src, row)) in map.iter().enumerate() {
                                if src == s {
                                    gi.row_mut(row).iter_mut().zip(g.row(i)).for_each(|(a, b)| *a += b);
                                }
                            }
                        });
                    }
                }
                Op::Reshape(a) => {
                    let v = self.value(*a);
                    Self::acc(&mut grads, *a, g.clone().reshape(v.rows, v.cols));
                }
                Op::Attention { qkv, heads, mask, probs } => {
                    let x = self.value(*qkv);
                    let d = attention_backward(x, &g, *heads, *mask, probs);
                    Self::acc(&mut grads, *qkv, d);
                }
                Op::CrossEntropy { logits, targets, scale, probs } => {
                    let s = g.data[0] * scale;
                    let mut d = Mat::zeros(probs.rows, probs.cols);
                    for (i, t) in targets.iter().enumerate() {
                        if let Some(t) = *t {
                            let row = d.row_mut(i);
                            row.iter_mut().zip(probs.row(i)).for_each(|(a, p)| *a = s * p);
                            row[t] -= s;
                        }
                    }
                    Self::acc(&mut grads, *logits, d);
                }
            }
            grads[idx] = Some(g);
        }
        self.grads = grads;
    }
}

fn attention_backward(x: &Mat, g: &Mat, heads: usize, mask: Mask, probs: &[f64]) -> Mat {
    let (l, w) = (x.rows, x.cols / 3);
    let d = w / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let stride = 3 * w;
    let mut dx = Mat::zeros(l, 3 * w);
    let mut offset = 0;
    let mut dp = Vec::new();
    for h in 0..heads {
        let (qo, ko, vo) = (h * d, w + h * d, 2 * w + h * d);
        for i in 0..l {
            let lo = mask.first_key(i);
            let n = i - lo + 1;
            let p = &probs[offset..offset + n];
            offset += n;
            let go = &g.data[i * w + h * d..i * w + h * d + d];
            dp.clear();
            for j in lo..=i {
                let vr = &x.data[j * stride + vo..j * stride + vo + d];
                dp.push(go.iter().zip(vr).map(|(a, b)| a * b).sum::<f64>());
            }
            let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
            for (idx, j) in (lo..=i).enumerate() {
                // dV_j += p_ij * dO_i
                for t in 0..d {
                    dx.data[j * stride + vo + t] += p[idx] * go[t];
                }
                let ds = p[idx] * (dp[idx] - dot) * scale;
                if ds != 0.0 {
                    for t in 0..d {
                        let kv = x.data[j * stride + ko + t];
                        let qv = x.data[i * stride + qo + t];
                        dx.data[i * stride + qo + t] += ds * kv;
                        dx.data[j * stride + ko + t] += ds * qv;
                    }
                }
            }
        }
    }
    dx
}

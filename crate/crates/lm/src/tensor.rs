//! Dense row-major `f64` matrices and the numeric kernels shared by the
//! taped and the incremental forward passes.

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "shape {rows}x{cols} does not match {} values", data.len());
        Self { rows, cols, data }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn reshape(mut self, rows: usize, cols: usize) -> Self {
        assert_eq!(rows * cols, self.data.len());
        self.rows = rows;
        self.cols = cols;
        self
    }
}

/// `c = alpha * op(a) * op(b) + beta * c`, where `op` optionally transposes.
pub fn gemm(a: &Mat, ta: bool, b: &Mat, tb: bool, c: &mut Mat, alpha: f64, beta: f64) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let (k2, n) = if tb { (b.cols, b.rows) } else { (b.rows, b.cols) };
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!((c.rows, c.cols), (m, n), "output shape");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.data.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and extents describe the backing buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut c = Mat::zeros(a.rows, b.cols);
    gemm(a, false, b, false, &mut c, 1.0, 0.0);
    c
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm. Returns the output, the normalized rows and the
/// inverse standard deviations.
pub fn layer_norm(x: &Mat, gamma: &[f64], beta: &[f64]) -> (Mat, Mat, Vec<f64>) {
    let mut y = Mat::zeros(x.rows, x.cols);
    let mut xhat = Mat::zeros(x.rows, x.cols);
    let mut inv = Vec::with_capacity(x.rows);
    let n = x.cols as f64;
    for i in 0..x.rows {
        let r = x.row(i);
        let mean = r.iter().sum::<f64>() / n;
        let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv.push(is);
        let xh = xhat.row_mut(i);
        for (j, v) in r.iter().enumerate() {
            xh[j] = (v - mean) * is;
        }
        let yr = y.row_mut(i);
        for j in 0..r.len() {
            yr[j] = xhat.data[i * x.cols + j] * gamma[j] + beta[j];
        }
    }
    (y, xhat, inv)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    v.iter_mut().for_each(|x| *x /= sum);
}

/// Which keys a query may see.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mask {
    /// Keys `0..=i`.
    Causal,
    /// Keys from the start of `i`'s block of the given size up to `i`.
    BlockCausal(usize),
}

impl Mask {
    pub fn first_key(&self, i: usize) -> usize {
        match *self {
            Mask::Causal => 0,
            Mask::BlockCausal(p) => i - i % p,
        }
    }
}

/// Attention of one query row against keys/values `lo..=hi` of `k`/`v`
/// (row-major, row stride `stride`, head `h` at column offset `off`).
/// Writes the head output into `out` and the probabilities into `probs`.
#[allow(clippy::too_many_arguments)]
pub fn attend_row(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    stride: usize,
    off: usize,
    d: usize,
    lo: usize,
    hi: usize,
    probs: &mut Vec<f64>,
    out: &mut [f64],
) {
    let scale = 1.0 / (d as f64).sqrt();
    probs.clear();
    for j in lo..=hi {
        let kr = &k[j * stride + off..j * stride + off + d];
        let mut s = 0.0;
        for t in 0..d {
            s += q[t] * kr[t];
        }
        probs.push(s * scale);
    }
    softmax_in_place(probs);
    out.iter_mut().for_each(|o| *o = 0.0);
    for (idx, j) in (lo..=hi).enumerate() {
        let p = probs[idx];
        let vr = &v[j * stride + off..j * stride + off + d];
        for t in 0..d {
            out[t] += p * vr[t];
        }
    }
}

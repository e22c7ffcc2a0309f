use std::path::Path;

use ndarray::{s, Array2, Array3, ArrayView2};

use super::kmeans::{lloyd, nearest};
use super::{ReferenceTokens, TokenizeError};
use crate::container::{Container, Kind, Payload};
use crate::seed::sub_seed;

/// `N_q` stages of `K2 x D` codebooks applied to successive residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqCodec {
    /// Shape `N_q x K2 x D`.
    pub codebooks: Array3<f32>,
    pub decode_depth: usize,
}

/// `T x N_q` code matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AcousticCodes {
    pub codes: Array2<u32>,
}

impl AcousticCodes {
    pub fn frames(&self) -> usize {
        self.codes.nrows()
    }

    pub fn n_q(&self) -> usize {
        self.codes.ncols()
    }

    pub fn empty(n_q: usize) -> Self {
        Self { codes: Array2::zeros((0, n_q)) }
    }
}

impl RvqCodec {
    pub fn n_q(&self) -> usize {
        self.codebooks.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.codebooks.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.codebooks.shape()[2]
    }

    pub fn stage(&self, tau: usize) -> ArrayView2<'_, f32> {
        self.codebooks.slice(s![tau, .., ..])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizeError> {
        let data = self.codebooks.iter().copied().collect();
        let meta = vec![self.n_q() as u32, self.k() as u32, self.dim() as u32, self.decode_depth as u32];
        Container::new(Kind::RvqCodec, vec![self.n_q(), self.k(), self.dim()], meta, Payload::F32(data))?.save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizeError> {
        let c = Container::load(path, Kind::RvqCodec)?;
        let (shape, meta) = (c.shape.clone(), c.meta.clone());
        if shape.len() != 3 || meta.len() < 4 {
            return Err(TokenizeError::InvalidArgument("malformed codec header".into()));
        }
        let codebooks = Array3::from_shape_vec((shape[0], shape[1], shape[2]), c.into_f32()?)
            .map_err(|e| TokenizeError::InvalidArgument(e.to_string()))?;
        Ok(Self { codebooks, decode_depth: meta[3] as usize })
    }
}

/// Stage 1 clusters the features; every later stage clusters the residual
/// left by the earlier ones, with its entry 0 pinned to the zero vector so a
/// stage never makes a frame's reconstruction worse.
pub fn rvq_fit(
    features: ArrayView2<f32>,
    n_q: usize,
    k2: usize,
    iters: usize,
    seed: u64,
) -> Result<RvqCodec, TokenizeError> {
    let (n, d) = features.dim();
    if n < k2 {
        return Err(TokenizeError::TooFewPoints { n, k: k2 });
    }
    if n_q == 0 {
        return Err(TokenizeError::InvalidArgument("need at least one stage".into()));
    }
    let mut residual = features.to_owned();
    let mut codebooks = Array3::<f32>::zeros((n_q, k2, d));
    for tau in 0..n_q {
        let (centroids, _) = lloyd(residual.view(), k2, iters, sub_seed(seed, &format!("stage{tau}")), tau > 0)?;
        for mut row in residual.outer_iter_mut() {
            let (c, _) = nearest(row.as_slice().unwrap(), centroids.view());
            row.iter_mut().zip(centroids.row(c)).for_each(|(r, &v)| *r -= v);
        }
        codebooks.slice_mut(s![tau, .., ..]).assign(&centroids);
    }
    Ok(RvqCodec { codebooks, decode_depth: 3.min(n_q) })
}

pub fn rvq_encode(features: ArrayView2<f32>, codec: &RvqCodec) -> Result<AcousticCodes, TokenizeError> {
    Ok(rvq_encode_traced(features, codec)?.0)
}

/// Greedy encode that also returns the running residual before every stage
/// (`residuals[d]` is what remains after `d` stages).
pub fn rvq_encode_traced(
    features: ArrayView2<f32>,
    codec: &RvqCodec,
) -> Result<(AcousticCodes, Vec<Array2<f32>>), TokenizeError> {
    if features.ncols() != codec.dim() {
        return Err(TokenizeError::DimMismatch { expected: codec.dim(), got: features.ncols() });
    }
    let t = features.nrows();
    let mut codes = Array2::<u32>::zeros((t, codec.n_q()));
    let mut residual = features.as_standard_layout().to_owned();
    let mut trace = vec![residual.clone()];
    for tau in 0..codec.n_q() {
        let book = codec.stage(tau);
        for (i, mut row) in residual.outer_iter_mut().enumerate() {
            let (c, _) = nearest(row.as_slice().unwrap(), book);
            codes[[i, tau]] = c as u32;
            row.iter_mut().zip(book.row(c)).for_each(|(r, &v)| *r -= v);
        }
        trace.push(residual.clone());
    }
    Ok((AcousticCodes { codes }, trace))
}

/// Sum of the selected entries of stages `1..=depth`.
pub fn rvq_decode(codes: &AcousticCodes, codec: &RvqCodec, depth: usize) -> Result<Array2<f32>, TokenizeError> {
    if depth > codec.n_q() || depth > codes.n_q() {
        return Err(TokenizeError::DepthOutOfRange { depth, n_q: codec.n_q().min(codes.n_q()) });
    }
    let mut out = Array2::<f32>::zeros((codes.frames(), codec.dim()));
    for (mut row, c) in out.outer_iter_mut().zip(codes.codes.outer_iter()) {
        for tau in 0..depth {
            let k = c[tau] as usize;
            if k >= codec.k() {
                return Err(TokenizeError::InvalidArgument(format!("code {k} out of range")));
            }
            row.iter_mut().zip(codec.codebooks.slice(s![tau, k, ..])).for_each(|(r, &v)| *r += v);
        }
    }
    Ok(out)
}

/// First-codebook codes.
pub fn extract_reference(codes: &AcousticCodes) -> ReferenceTokens {
    if codes.n_q() == 0 {
        return Vec::new();
    }
    codes.codes.column(0).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mse(a: ArrayView2<f32>, b: ArrayView2<f32>) -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64
    }

    fn clustered(n: usize, seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres: Vec<Vec<f32>> = (0..12).map(|_| (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        Array2::from_shape_fn((n, 8), |(i, j)| centres[i % 12][j] + rng.gen_range(-0.5..0.5))
    }

    #[test]
    fn depth_monotone_on_held_out() {
        let train = clustered(2000, 1);
        let test = clustered(300, 2);
        let codec = rvq_fit(train.view(), 8, 16, 25, 9).unwrap();
        let codes = rvq_encode(test.view(), &codec).unwrap();
        let errs: Vec<f64> = (1..=8).map(|d| mse(test.view(), rvq_decode(&codes, &codec, d).unwrap().view())).collect();
        for w in errs.windows(2) {
            assert!(w[1] <= w[0], "{errs:?}");
        }
        assert!(errs[7] < errs[0]);
    }

    #[test]
    fn constant_features_are_exact_at_depth_one() {
        let v = [0.5f32, -1.0, 2.0];
        let x = Array2::from_shape_fn((40, 3), |(_, j)| v[j]);
        let codec = rvq_fit(x.view(), 4, 4, 10, 0).unwrap();
        assert!(codec.stage(0).outer_iter().any(|r| r.to_vec() == v));
        let codes = rvq_encode(x.view(), &codec).unwrap();
        assert_eq!(rvq_decode(&codes, &codec, 1).unwrap(), x);
    }

    #[test]
    fn constructed_fixture_and_telescoping() {
        let mut books = Array3::<f32>::zeros((3, 3, 2));
        books.slice_mut(s![0, 1, ..]).assign(&ndarray::arr1(&[4.0, 0.0]));
        books.slice_mut(s![0, 2, ..]).assign(&ndarray::arr1(&[0.0, 4.0]));
        books.slice_mut(s![1, 1, ..]).assign(&ndarray::arr1(&[0.5, 0.5]));
        books.slice_mut(s![1, 2, ..]).assign(&ndarray::arr1(&[-0.5, 0.5]));
        books.slice_mut(s![2, 1, ..]).assign(&ndarray::arr1(&[9.0, 9.0]));
        let codec = RvqCodec { codebooks: books, decode_depth: 3 };
        let x = Array2::from_shape_vec((1, 2), vec![4.5, 0.5]).unwrap();
        let (codes, trace) = rvq_encode_traced(x.view(), &codec).unwrap();
        assert_eq!(codes.codes.row(0).to_vec(), vec![1, 1, 0]);
        assert_eq!(rvq_decode(&codes, &codec, 2).unwrap(), x);
        assert!(trace[2].iter().all(|&v| v == 0.0));
        for d in 0..3 {
            let dec = rvq_decode(&codes, &codec, d).unwrap();
            assert_eq!(&x - &dec, trace[d]);
        }
        assert_eq!(rvq_decode(&codes, &codec, 0).unwrap(), Array2::<f32>::zeros((1, 2)));
        assert!(matches!(rvq_decode(&codes, &codec, 4), Err(TokenizeError::DepthOutOfRange { .. })));
    }

    #[test]
    fn reference_is_first_column() {
        let codes = AcousticCodes { codes: Array2::from_shape_fn((3, 8), |(i, j)| if j == 0 { [3, 1, 4][i] } else { 7 }) };
        assert_eq!(extract_reference(&codes), vec![3, 1, 4]);
        assert!(extract_reference(&AcousticCodes::empty(8)).is_empty());
    }

    #[test]
    fn codec_persists_bitwise() {
        let x = clustered(300, 5);
        let codec = rvq_fit(x.view(), 3, 8, 10, 1).unwrap();
        assert_eq!(codec, rvq_fit(x.view(), 3, 8, 10, 1).unwrap());
        let dir = tempfile::tempdir().unwrap();
        codec.save(dir.path().join("c.bin")).unwrap();
        assert_eq!(RvqCodec::load(dir.path().join("c.bin")).unwrap(), codec);
    }
}

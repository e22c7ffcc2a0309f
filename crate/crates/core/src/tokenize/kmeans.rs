use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{SemanticTokens, TokenizeError};
use crate::container::{Container, Kind, Payload};
use crate::signal::sq_dist;

const TOLERANCE: f64 = 1e-6;

/// `K1 x D` cluster centres.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticCodebook {
    pub centroids: Array2<f32>,
}

impl SemanticCodebook {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.ncols()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TokenizeError> {
        let data = self.centroids.iter().copied().collect();
        Container::new(Kind::SemanticCodebook, vec![self.k(), self.dim()], vec![], Payload::F32(data))?.save(path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TokenizeError> {
        let c = Container::load(path, Kind::SemanticCodebook)?;
        let shape = c.shape.clone();
        if shape.len() != 2 {
            return Err(TokenizeError::InvalidArgument("codebook must be 2-D".into()));
        }
        let centroids = Array2::from_shape_vec((shape[0], shape[1]), c.into_f32()?)
            .map_err(|e| TokenizeError::InvalidArgument(e.to_string()))?;
        Ok(Self { centroids })
    }
}

/// Index and squared distance of the nearest row of `centroids`; ties go to
/// the lowest index.
pub fn nearest(x: &[f32], centroids: ArrayView2<f32>) -> (usize, f32) {
    let mut best = (0, f32::INFINITY);
    for (i, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(x, c.as_slice().expect("standard layout"));
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn assign(x: ArrayView2<f32>, centroids: ArrayView2<f32>) -> Vec<(usize, f32)> {
    let centroids = centroids.as_standard_layout();
    let rows: Vec<_> = x.outer_iter().collect();
    rows.par_iter()
        .map(|r| nearest(r.as_slice().expect("standard layout"), centroids.view()))
        .collect()
}

/// Lloyd's algorithm from k-means++ seeding. With `pin_zero` the first centre
/// is fixed at the origin, so no point ever ends up farther from its centre
/// than from zero.
pub(crate) fn lloyd(
    x: ArrayView2<f32>,
    k: usize,
    max_iters: usize,
    seed: u64,
    pin_zero: bool,
) -> Result<(Array2<f32>, Vec<f64>), TokenizeError> {
    let (n, d) = x.dim();
    if n < k || k == 0 {
        return Err(TokenizeError::TooFewPoints { n, k: k.max(1) });
    }
    let x = x.as_standard_layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_plus_plus(x.view(), k, pin_zero, &mut rng);
    let mut history = Vec::new();
    let mut assignment = assign(x.view(), centroids.view());
    history.push(inertia(&assignment));
    for _ in 0..max_iters {
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (row, &(c, _)) in x.outer_iter().zip(&assignment) {
            counts[c] += 1;
            sums.row_mut(c).iter_mut().zip(row).for_each(|(s, &v)| *s += v as f64);
        }
        let mut next = centroids.clone();
        for c in 0..k {
            if pin_zero && c == 0 {
                continue;
            }
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                next.row_mut(c).iter_mut().zip(sums.row(c)).for_each(|(m, &s)| *m = (s * inv) as f32);
            }
        }
        let empty: Vec<usize> = (0..k).filter(|&c| counts[c] == 0 && !(pin_zero && c == 0)).collect();
        if !empty.is_empty() {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1).then(a.cmp(&b)));
            for (c, &p) in empty.iter().zip(&order) {
                next.row_mut(*c).assign(&x.row(p));
            }
        }
        let movement = next
            .outer_iter()
            .zip(centroids.outer_iter())
            .map(|(a, b)| sq_dist(a.as_slice().unwrap(), b.as_slice().unwrap()) as f64)
            .fold(0.0, f64::max)
            .sqrt();
        centroids = next;
        assignment = assign(x.view(), centroids.view());
        history.push(inertia(&assignment));
        if movement < TOLERANCE && empty.is_empty() {
            break;
        }
    }
    Ok((centroids, history))
}

fn inertia(assignment: &[(usize, f32)]) -> f64 {
    assignment.iter().map(|&(_, d)| d as f64).sum()
}

fn seed_plus_plus(x: ArrayView2<f32>, k: usize, pin_zero: bool, rng: &mut impl Rng) -> Array2<f32> {
    let (n, d) = x.dim();
    let mut centroids = Array2::<f32>::zeros((k, d));
    let first = if pin_zero {
        0
    } else {
        let i = rng.gen_range(0..n);
        centroids.row_mut(0).assign(&x.row(i));
        1
    };
    let c0 = centroids.row(0).to_owned();
    let c0 = c0.as_slice().unwrap();
    let mut dist: Vec<f64> = x.outer_iter().map(|r| sq_dist(r.as_slice().unwrap(), c0) as f64).collect();
    let start = if pin_zero { 1 } else { first };
    for c in start..k {
        let pick = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.gen_range(0..n),
        };
        centroids.row_mut(c).assign(&x.row(pick));
        let row = centroids.row(c).to_owned();
        let row = row.as_slice().unwrap();
        for (dd, r) in dist.iter_mut().zip(x.outer_iter()) {
            *dd = dd.min(sq_dist(r.as_slice().unwrap(), row) as f64);
        }
    }
    centroids
}

pub fn kmeans_fit(
    features: ArrayView2<f32>,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<SemanticCodebook, TokenizeError> {
    Ok(kmeans_fit_traced(features, k, max_iters, seed)?.0)
}

/// [`kmeans_fit`] plus the inertia after every assignment step.
pub fn kmeans_fit_traced(
    features: ArrayView2<f32>,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<(SemanticCodebook, Vec<f64>), TokenizeError> {
    let (centroids, history) = lloyd(features, k, max_iters, seed, false)?;
    Ok((SemanticCodebook { centroids }, history))
}

pub fn kmeans_encode(features: ArrayView2<f32>, codebook: &SemanticCodebook) -> Result<SemanticTokens, TokenizeError> {
    if features.ncols() != codebook.dim() {
        return Err(TokenizeError::DimMismatch { expected: codebook.dim(), got: features.ncols() });
    }
    Ok(assign(features, codebook.centroids.view()).into_iter().map(|(c, _)| c as u32).collect())
}

#[cfg(test)]
fn column_means(x: ArrayView2<f32>) -> Vec<f64> {
    x.mapv(|v| v as f64).mean_axis(ndarray::Axis(0)).unwrap().to_vec()
}

//! Named parameter storage and the Adam optimizer.

use rand::Rng;

use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Normal init with the given standard deviation.
    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> ParamId {
        let data = (0..rows * cols).map(|_| std * standard_normal(rng)).collect();
        self.add(name, Mat::from_vec(rows, cols, data))
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Mat::from_vec(rows, cols, vec![v; rows * cols]))
    }

    pub fn value(&self, id: ParamId) -> &Mat {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Mat {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.len()).sum()
    }

    /// Zeroed gradient buffers shaped like the parameters.
    pub fn zero_grads(&self) -> Vec<Mat> {
        self.values.iter().map(|m| Mat::zeros(m.rows, m.cols)).collect()
    }
}

pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, clip: f64) -> Self {
        let zeros = || params.values.iter().map(|p| vec![0.0; p.len()]).collect();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn grad_norm(grads: &[Mat]) -> f64 {
        grads.iter().flat_map(|g| &g.data).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Clips the global gradient norm to `clip` and applies one update.
    /// Returns the norm before clipping.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Mat]) -> f64 {
        let norm = Self::grad_norm(grads);
        let factor = if self.clip > 0.0 && norm > self.clip { self.clip / norm } else { 1.0 };
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (i, g) in grads.iter().enumerate() {
            let p = &mut params.values[i].data;
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((pj, mj), vj), gj) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(&g.data) {
                let gj = gj * factor;
                *mj = b1 * *mj + (1.0 - b1) * gj;
                *vj = b2 * *vj + (1.0 - b2) * gj * gj;
                *pj -= lr * (*mj / c1) / ((*vj / c2).sqrt() + eps);
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_quadratic() {
        let mut store = ParamStore::default();
        let id = store.add("x", Mat::from_vec(1, 2, vec![3.0, -2.0]));
        let mut opt = Adam::new(&store, 0.1, 0.0);
        for _ in 0..500 {
            let g = vec![Mat::from_vec(1, 2, store.value(id).data.iter().map(|x| 2.0 * x).collect())];
            opt.update(&mut store, &g);
        }
        assert!(store.value(id).data.iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn clipping_bounds_the_step() {
        let mut store = ParamStore::default();
        store.add("x", Mat::from_vec(1, 1, vec![0.0]));
        let mut opt = Adam::new(&store, 1.0, 1.0);
        let norm = opt.update(&mut store, &[Mat::from_vec(1, 1, vec![100.0])]);
        assert_eq!(norm, 100.0);
        assert!((store.value(ParamId(0)).data[0] + 1.0).abs() < 1e-6);
    }
}

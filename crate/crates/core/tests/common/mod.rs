#![allow(dead_code)]

use fermipca::rng::CounterRng;
use fermipca::{CovarianceModel, FeatureDataset, C64};
use nalgebra::DVector;

/// Small deterministic source of test randomness.
pub struct TestRng(CounterRng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(CounterRng::at(seed, 7, 0, 2))
    }

    pub fn uniform(&mut self) -> f64 {
        self.0.open01()
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn int(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        lo + ((hi_inclusive - lo + 1) as f64 * self.uniform()) as usize
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u = self.uniform();
        let v = self.uniform();
        (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
    }

    pub fn unit_vector(&mut self, d: usize) -> DVector<C64> {
        let v = DVector::from_fn(d, |_, _| C64::new(self.normal(), self.normal()));
        let n = v.norm();
        v / C64::new(n, 0.0)
    }

    /// Centered model from `n` random complex feature states.
    pub fn centered_model(&mut self, d: usize, n: usize) -> CovarianceModel {
        let vectors = (0..n).map(|_| self.unit_vector(d)).collect();
        CovarianceModel::build_centered(&FeatureDataset::new(vectors).unwrap()).unwrap()
    }

    /// Diagonal model with a random descending spectrum in `[0, 1]`.
    pub fn spectrum_model(&mut self, d: usize) -> CovarianceModel {
        let mut l: Vec<f64> = (0..d).map(|_| self.uniform()).collect();
        l.sort_by(|a, b| b.total_cmp(a));
        CovarianceModel::from_spectrum(&l).unwrap()
    }

    /// Descending spectrum whose consecutive gaps are at least `min_gap`.
    pub fn gapped_spectrum(&mut self, d: usize, min_gap: f64) -> Vec<f64> {
        let mut l = Vec::with_capacity(d);
        let mut x = self.range(0.0, 0.2);
        for _ in 0..d {
            l.push(x);
            x += min_gap + self.range(0.0, 0.3);
        }
        l.reverse();
        l
    }
}

//! Seeded random source shared by the model builders and the verification
//! probes. Backed by xoshiro256**, seeded through SplitMix64.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;

use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone)]
pub struct SeededRng(Xoshiro256StarStar);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng(Xoshiro256StarStar::seed_from_u64(seed))
    }

    /// Uniform draw from the half-open interval `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    pub fn uniform_tensor(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor {
        let data = (0..numel(shape)).map(|_| self.uniform(lo, hi)).collect();
        Tensor::new(shape.to_vec(), data).expect("generated length matches shape")
    }

    pub fn normal_tensor(&mut self, shape: &[usize]) -> Tensor {
        let data = (0..numel(shape)).map(|_| self.normal()).collect();
        Tensor::new(shape.to_vec(), data).expect("generated length matches shape")
    }
}

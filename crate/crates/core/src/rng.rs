//! Seeded random source.
//!
//! Backed by ChaCha8, whose output stream is fixed for a given seed on every
//! platform. Each run or arm owns its own `Rng`; independent streams are
//! derived with [`Rng::fork`].

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl Rng {
    pub fn seed_from(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A new generator whose stream depends only on this generator's seed and `stream`.
    pub fn fork(&self, stream: u64) -> Rng {
        Rng::seed_from(splitmix64(self.seed ^ splitmix64(stream)))
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Normal draw; `std == 0` returns `mean` exactly.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        if std == 0.0 {
            return mean;
        }
        Normal::new(mean, std)
            .expect("std must be finite and non-negative")
            .sample(&mut self.inner)
    }

    pub fn normal_tensor(&mut self, shape: &[usize], mean: f64, std: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.normal(mean, std)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape product equals length")
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::seed_from(42);
        let mut b = Rng::seed_from(42);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
            assert_eq!(a.normal(0.0, 1.0).to_bits(), b.normal(0.0, 1.0).to_bits());
        }
    }

    #[test]
    fn forks_are_independent_of_parent_state() {
        let mut a = Rng::seed_from(3);
        let f1 = a.fork(1);
        a.uniform();
        let f2 = a.fork(1);
        assert_eq!(f1.seed(), f2.seed());
        assert_ne!(a.fork(1).seed(), a.fork(2).seed());
    }

    #[test]
    fn zero_std_is_exact_mean() {
        let mut r = Rng::seed_from(0);
        assert_eq!(r.normal(0.01, 0.0), 0.01);
    }
}

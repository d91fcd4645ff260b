//! Seeded random source.
//!
//! ChaCha8 drives every draw. Normal variates come from the ziggurat sampler in
//! `rand_distr::StandardNormal`. Child streams for pipeline stages or parallel
//! workers are derived with [`Rng::split`], never by sharing one generator.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Shape, Tensor3};

#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for `(seed, index)`, e.g. a pipeline stage or a worker.
    pub fn split(&self, index: u64) -> Rng {
        Rng::new(derive_seed(self.seed, index))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }
}

/// SplitMix64 finalizer over the pair; distinct indices give well-separated seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// I.i.d. `N(0, 1)` tensor of the given shape.
pub fn draw_standard_normal(rng: &mut Rng, shape: Shape) -> Tensor3 {
    let mut t = Tensor3::zeros(shape);
    rng.fill_normal(t.as_mut_slice());
    t
}

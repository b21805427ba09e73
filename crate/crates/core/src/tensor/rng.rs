use rand::seq::SliceRandom;
use rand::{Rng as _, RngExt, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

/// Deterministic pseudo-random source used for initialization, dropout masks,
/// shuffling and data splits.
///
/// The generator is xoshiro256++ whose 256-bit state is expanded from the
/// 64-bit seed with SplitMix64. Gaussian draws use the ziggurat sampler of
/// `rand_distr::StandardNormal`. Two generators built from the same seed
/// produce the same sequence on every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: Xoshiro256PlusPlus,
}

impl Rng {
    pub fn seed(seed: u64) -> Self {
        Rng { inner: Xoshiro256PlusPlus::seed_from_u64(seed) }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// Derives an independent child generator, advancing this one by one draw.
    pub fn fork(&mut self) -> Rng {
        Rng::seed(self.next_u64())
    }
}

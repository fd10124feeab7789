//! Reproducible random streams keyed by `(scenario seed, replicate index)`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math;

/// Names one independent random stream; the generator is a pure function
/// of the pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeededStream {
    pub seed: u64,
    pub index: u64,
}

impl SeededStream {
    pub fn new(seed: u64, index: u64) -> Self {
        Self { seed, index }
    }

    /// ChaCha8 keyed by the seed, with the replicate index as stream id.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.index);
        rng
    }
}

/// Uniform on `(0, 1]` with 53 random bits.
#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Exponential waiting time with the given rate.
#[inline]
pub fn exponential<R: RngCore + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -math::ln(uniform(rng)) / rate
}

/// Geometric on `{1, 2, ...}` with success probability `p`.
pub fn geometric<R: RngCore + ?Sized>(rng: &mut R, p: f64) -> u64 {
    if p >= 1.0 {
        return 1;
    }
    let u = uniform(rng);
    1 + math::floor(math::ln(u) / math::ln_1p(-p)) as u64
}

//! Seeded randomness. Every random draw in the crate goes through a
//! [`UniformSource`], and all production streams come from [`seeded`].

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// A source of uniform variates in `[0, 1)`.
pub trait UniformSource {
    fn uniform(&mut self) -> f64;
}

impl<R: RngCore> UniformSource for R {
    fn uniform(&mut self) -> f64 {
        self.gen::<f64>()
    }
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for a named purpose derived from a base seed.
pub fn substream(seed: u64, purpose: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

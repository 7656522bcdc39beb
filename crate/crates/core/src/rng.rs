//! Seedable randomness. Every stochastic routine takes one of these
//! explicitly; nothing in the crate touches a global generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SeedRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child stream; advances the parent by one draw.
pub fn fork(rng: &mut SeedRng) -> SeedRng {
    ChaCha8Rng::seed_from_u64(rng.random())
}

pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

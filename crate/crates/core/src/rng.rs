//! Seeded randomness.
//!
//! Every random draw in the crate comes from a SplitMix64 stream. Streams
//! for sub-tasks (an epoch's shuffle, one example's dropout masks) are
//! derived from the run seed with [`derive_seed`], so results do not depend
//! on evaluation order.

use rand::{Rng, RngCore, SeedableRng};
pub use rand_xoshiro::SplitMix64;

pub fn seeded(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Mixes a tag path into a base seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut state = base;
    for &t in tags {
        let mut rng = SplitMix64::seed_from_u64(state ^ t.wrapping_mul(GOLDEN));
        state = rng.next_u64();
    }
    state
}

pub fn uniform_vec(rng: &mut SplitMix64, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

//! Deterministic seed derivation for independent RNG streams.
//!
//! Every stochastic draw in the crate comes from a ChaCha stream seeded by
//! mixing a master seed with a small tuple of context words (epoch, prompt,
//! view, timestep, ...). Streams are therefore independent of evaluation
//! order, which is what makes sampling parallelizable and view-permutation
//! equivariance hold bit-for-bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates sequentially absorbed words.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a context tuple.
pub fn derive(master: u64, parts: &[u64]) -> u64 {
    let mut state = mix(master ^ 0x5851_f42d_4c95_7f2d);
    for &p in parts {
        state = mix(state ^ mix(p));
    }
    state
}

/// A ChaCha stream for the given derived seed.
pub fn stream(master: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, parts))
}

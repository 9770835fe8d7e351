//! Deterministic seed derivation.
//!
//! Every stochastic component (posterior draws, dropout masks, epoch
//! shuffles, synthetic data) derives its RNG seed from a base seed plus
//! integer coordinates through the same mixing function, so parallel and
//! serial execution, or resuming from a checkpoint, replay identical
//! random streams.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; a cheap, well-mixed 64-bit permutation.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a base seed with coordinates (stream id, index, ...) into a new seed.
pub fn derive_seed(base: u64, coords: &[u64]) -> u64 {
    let mut state = splitmix64(base);
    for &c in coords {
        state = splitmix64(state.wrapping_add(c).rotate_left(17));
    }
    state
}

/// Seeded ChaCha stream for the given coordinates.
pub fn rng_for(base: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, coords))
}

//! Seeded random streams.
//!
//! Every random draw in the crate goes through ChaCha8 keyed by a 64-bit seed,
//! so identical seeds reproduce identical output on every platform. Independent
//! sub-streams (Monte Carlo chunks, per-scene generation, shuffling) derive
//! their own seeds with a SplitMix64 finalizer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier recorded in manifests next to every seed.
pub const RNG_ALGORITHM: &str = "chacha8 (rand_chacha 0.9, seed_from_u64)";

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for sub-stream `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derived_rng(seed: u64, stream: u64) -> Rng {
    rng_from_seed(derive_seed(seed, stream))
}

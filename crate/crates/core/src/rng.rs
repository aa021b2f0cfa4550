//! Seed derivation for reproducible, order-independent randomness.
//!
//! Everything stochastic in the toolkit is keyed by a single `u64` seed.
//! Parallel or per-unit work (rollout episodes, clustering restarts, per-node
//! refits) derives an independent stream seed with [`derive_seed`] so results
//! do not depend on scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates nearby `(seed, stream)` pairs.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for an independent stream (`episode`, `restart`, `node`,
/// ...) from the run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0xA5A5_5A5A_0F0F_F0F0)))
}

/// Deterministic RNG for a derived stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

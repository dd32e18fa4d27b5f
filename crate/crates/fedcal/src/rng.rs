//! Seed derivation for reproducible random streams.
//!
//! Every stochastic step in the simulator draws from a ChaCha stream whose
//! seed is derived from the master seed plus a tag path (round, client id,
//! purpose). Streams are therefore independent of execution order: a client
//! update in round 7 sees the same randomness no matter which thread runs it.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a 64-bit seed from a master seed and a tag path.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = mix(master);
    for &t in tags {
        state = mix(state ^ mix(t));
    }
    state
}

/// Derive an independent RNG stream from a master seed and a tag path.
pub fn derive_rng(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}

/// Tag constants naming the independent streams of a federation run.
pub mod stream {
    pub const MODEL_INIT: u64 = 1;
    pub const SCALER_INIT: u64 = 2;
    pub const CLIENT_SELECT: u64 = 3;
    pub const CLIENT_UPDATE: u64 = 4;
    pub const SCALER_NOISE: u64 = 5;
    pub const PARTITION: u64 = 6;
    pub const TEST_SPLIT: u64 = 7;
    pub const SYNTHETIC: u64 = 8;
}

//! Seed derivation. Every stochastic routine draws its randomness from a
//! generator keyed by `(seed, stream, index)`, so results do not depend on how
//! work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep the sample streams of different routines apart.
pub mod stream {
    pub const GAUSSIAN_WIDTH: u64 = 1;
    pub const COUPLING: u64 = 2;
    pub const SDE_PATH: u64 = 3;
    pub const RESTART: u64 = 4;
    pub const FOLLMER: u64 = 5;
    pub const ERGM: u64 = 6;
    pub const TEST: u64 = 7;
    pub const VERIFY: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}

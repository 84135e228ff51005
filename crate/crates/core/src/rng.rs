//! Seed derivation. Every random stream in the pipeline is a ChaCha8 generator
//! keyed by a global seed and a purpose tag, so streams never alias and runs
//! are reproducible across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream(seed: u64, tag: u64) -> Rng {
    Rng::seed_from_u64(derive(seed, tag))
}

/// Purpose tags for derived streams.
pub mod tag {
    pub const SPLIT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const LDP: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const NEGATIVES: u64 = 6;
    pub const SUBSAMPLE: u64 = 7;
    pub const VALIDATION: u64 = 8;
    pub const EXAMPLE: u64 = 9;
}

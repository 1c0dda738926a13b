//! Seeded random streams.
//!
//! Every stochastic step draws from a stream derived from the run seed and a
//! tuple of tags (level, generation, individual, ...). Work may then be
//! scheduled on any number of threads without changing the draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a list of tags into a new 64-bit seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn substream(seed: u64, tags: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, tags))
}

/// Stream tags used across levels so that no two levels share draws.
pub mod tags {
    pub const SUBSPACES: u64 = 1;
    pub const MODELS: u64 = 2;
    pub const TRAINING: u64 = 3;
    pub const FINETUNE: u64 = 4;
    pub const BASELINE: u64 = 5;
    pub const SYNTH: u64 = 6;
    pub const BENCH: u64 = 7;
    pub const LOOP: u64 = 0xC0FFEE;
}

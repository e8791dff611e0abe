//! Seeded random number generation.
//!
//! Every simulated instance is drawn from a `ChaCha8Rng` seeded with
//! `seed_from_u64`; normals come from `rand_distr::StandardNormal`.
//! Trial seeds are derived with SplitMix64 so that each (cell, trial) pair
//! owns an independent stream and trials can run in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifier recorded in experiment reports.
pub const RNG_ALGORITHM: &str = "chacha8 (rand_chacha 0.9, seed_from_u64) + StandardNormal ziggurat";

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One SplitMix64 output step.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Folds a sequence of words into one 64-bit key.
pub fn hash_words(words: &[u64]) -> u64 {
    words.iter().fold(0x243F_6A88_85A3_08D3, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// `base_seed ⊕ hash(cell_key, trial)`.
pub fn trial_seed(base_seed: u64, cell_key: u64, trial: u64) -> u64 {
    base_seed ^ hash_words(&[cell_key, trial])
}

//! Seed discipline.
//!
//! Replica `r` of an experiment with base seed `s` draws from a ChaCha8
//! stream seeded with `replica_seed(s, r)`. The derivation is a SplitMix64
//! finaliser applied to `s + (r + 1) * golden`, which is stable across
//! versions and independent of worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub type SimRng = ChaCha8Rng;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replica `replica` under base seed `base`.
pub fn replica_seed(base: u64, replica: u64) -> u64 {
    splitmix64(base.wrapping_add(replica.wrapping_add(1).wrapping_mul(GOLDEN)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent sub-seed for a named purpose within one replica.
pub fn sub_seed(seed: u64, purpose: u64) -> u64 {
    splitmix64(seed ^ splitmix64(purpose))
}

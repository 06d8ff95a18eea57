//! Deterministic per-episode seeding.
//!
//! Every episode draws from its own ChaCha stream whose seed is a pure
//! function of `(master_seed, iteration, episode_index)`, so batches can be
//! generated in any order, by any number of workers, and extended later
//! without disturbing the episodes already drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type EpisodeRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of episode `index` at `iteration` under `master_seed`.
///
/// Each input is absorbed through a full SplitMix64 round, so nearby
/// triples give unrelated seeds.
pub fn episode_seed(master_seed: u64, iteration: u64, index: u64) -> u64 {
    let mut h = mix64(master_seed.wrapping_add(GOLDEN));
    h = mix64(h ^ iteration.wrapping_add(GOLDEN.wrapping_mul(2)));
    mix64(h ^ index.wrapping_add(GOLDEN.wrapping_mul(3)))
}

pub fn seeded_rng(seed: u64) -> EpisodeRng {
    ChaCha8Rng::seed_from_u64(seed)
}

//! Seeded, platform-independent randomness.
//!
//! All sampling goes through ChaCha8 so a given seed yields the same stream on
//! every platform. Per-sample streams are derived from the run seed and the
//! pair index with a SplitMix64 finalizer, so appending pairs to a corpus
//! never reshuffles the selections of earlier pairs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type SampleRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SampleRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the sample at `index` of a run seeded with `run_seed`.
pub fn derive_seed(run_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(run_seed) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// First `n` elements of a uniform random permutation of `0..len`
/// (partial Fisher-Yates). Requires `n <= len`.
pub fn sample_indices(rng: &mut SampleRng, len: usize, n: usize) -> Vec<usize> {
    assert!(n <= len, "cannot sample {n} of {len}");
    let mut idx: Vec<usize> = (0..len).collect();
    for i in 0..n {
        let j = rng.random_range(i..len);
        idx.swap(i, j);
    }
    idx.truncate(n);
    idx
}

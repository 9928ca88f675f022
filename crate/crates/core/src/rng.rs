//! Derivation of independent RNG substreams from a single root seed.
//!
//! Every source of randomness in an experiment (truth sampling, data
//! simulation, each model's prior and rejuvenation draws) gets its own
//! substream addressed by a tag path, so results are independent of scheduling
//! and worker count: equal `(seed, tags)` always yields the same stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derive the substream addressed by `tags` under `root_seed`.
pub fn substream(root_seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(root_seed ^ 0x6a09_e667_f3bc_c908);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag));
    }
    ChaCha8Rng::seed_from_u64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

//! Seed derivation. Every stochastic unit of work (restart, bootstrap
//! replicate, Monte-Carlo replicate) gets its own stream derived from the
//! user seed and its index, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent generator for work item `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Child seed for nested work, mixed with splitmix64.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(tag)) ^ index)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! Derived random streams.
//!
//! Every sampler in the pipeline draws from its own ChaCha stream keyed by
//! the global seed plus a path of indices (stage, step, prompt, sample), so
//! results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stage tags mixed into derived seeds.
pub mod stage {
    pub const SYNTH: u64 = 0x5359_4e54;
    pub const SFT_SHUFFLE: u64 = 0x5346_5453;
    pub const GRPO_BATCH: u64 = 0x4752_5042;
    pub const GRPO_SAMPLE: u64 = 0x4752_5053;
    pub const DEV_EVAL: u64 = 0x4445_5645;
    pub const EVAL: u64 = 0x4556_414c;
    pub const INFER: u64 = 0x494e_4652;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `seed` with `path` into a single 64-bit seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn derive_rng(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}

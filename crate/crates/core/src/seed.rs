//! Seed derivation.
//!
//! Every random stream in an experiment is seeded from one root seed and a
//! stage counter, so any stage (or sweep point) can be re-run on its own:
//!
//! ```text
//! derive(root, counter) = splitmix64(root ^ splitmix64(counter))
//! ```
//!
//! The counters used by the pipeline are the `STAGE_*` constants; sweep
//! points add their index to [`STAGE_SWEEP`].

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STAGE_FAMILY: u64 = 1;
pub const STAGE_INIT: u64 = 2;
pub const STAGE_PRETRAIN: u64 = 3;
/// Fine-tuning of task `t` uses `STAGE_FINETUNE + t`.
pub const STAGE_FINETUNE: u64 = 0x100;
pub const STAGE_PARTITION: u64 = 4;
pub const STAGE_MASK: u64 = 5;
pub const STAGE_SWEEP: u64 = 0x1000;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(root: u64, counter: u64) -> u64 {
    splitmix64(root ^ splitmix64(counter))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

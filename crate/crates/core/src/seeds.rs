//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from a
//! 64-bit value. Independent streams are derived from a master seed with
//! a SplitMix64 finalizer over `(master, stream tag, index)`, so experiment
//! run `i` gets data and learner seeds that do not overlap with run `j`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for [`derive`].
pub mod stream {
    pub const DATA: u64 = 1;
    pub const RESERVOIR: u64 = 2;
    pub const LEARNER: u64 = 3;
    pub const VALIDATION: u64 = 4;
    pub const ENVIRONMENT: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(master: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ tag) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The three seeds used by one experiment repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub data: u64,
    pub reservoir: u64,
    pub learner: u64,
}

impl RunSeeds {
    pub fn for_run(master: u64, run: u64) -> Self {
        Self {
            data: derive(master, stream::DATA, run),
            reservoir: derive(master, stream::RESERVOIR, run),
            learner: derive(master, stream::LEARNER, run),
        }
    }

    /// Seeds for the held-out validation stream of run `run`.
    pub fn validation(master: u64, run: u64) -> Self {
        let v = derive(master, stream::VALIDATION, run);
        Self::for_run(v, 0)
    }
}

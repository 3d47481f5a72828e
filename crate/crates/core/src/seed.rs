//! Seed splitting.
//!
//! Every random stream is a ChaCha8 generator seeded with
//! `derive_seed(master, stream)`, where the derivation is two rounds of the
//! SplitMix64 finalizer. Independent streams therefore never share state,
//! and a run is reproducible from the master seed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(master) ^ stream)
}

pub fn stream_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}

/// Stream labels used across the crate.
pub mod streams {
    pub const DEMAND: u64 = 1;
    pub const RESPONSE_FIT: u64 = 2;
    pub const SWEEP: u64 = 3;
}

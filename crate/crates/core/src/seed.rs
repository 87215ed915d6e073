//! Deterministic seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator seeded from the
//! experiment seed plus a small tuple of stream coordinates (client id, epoch
//! index, tree index, ...). Streams never share state, so the order in which
//! they are consumed does not change their output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random generator used throughout the crate.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with stream coordinates into a new 64-bit seed.
pub fn derive(base: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(base), |acc, &c| splitmix64(acc ^ splitmix64(c)))
}

/// Generator for the stream identified by `coords` under `base`.
pub fn stream(base: u64, coords: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(base, coords))
}

/// Stream tags, so that unrelated streams with equal numeric coordinates differ.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const EPOCH: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const CLIENT: u64 = 4;
    pub const TREE: u64 = 5;
    pub const PHYSIO: u64 = 6;
    pub const IMAGE: u64 = 7;
    pub const AUGMENT: u64 = 8;
    pub const PARTITION: u64 = 9;
    pub const FOREST: u64 = 10;
}

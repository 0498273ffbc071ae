//! Seed derivation. Every random stream in the crate is a ChaCha8 generator
//! seeded from a master seed mixed with a tuple of stream coordinates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds stream coordinates into a master seed.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(mix64(master), |acc, &c| {
        mix64(acc ^ mix64(c.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

pub fn rng_from(master: u64, coords: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, coords))
}

/// Stream tags so that, e.g., the split stream and the dropout stream of the
/// same run never coincide.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const RESPLIT: u64 = 2;
    pub const FILL: u64 = 3;
    pub const INIT: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const MC: u64 = 6;
    pub const WSC: u64 = 7;
}

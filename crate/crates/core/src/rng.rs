//! Seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng`. A run seed is derived
//! from the base seed and replicate index with a SplitMix64 finaliser; within
//! a run, column `j` of the score matrix draws from stream `j` of a ChaCha key
//! taken from the run generator, so columns can be sampled in any order or in
//! parallel with identical output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replicate `replicate` of an experiment with `base` seed.
pub fn replicate_seed(base: u64, replicate: u64) -> u64 {
    mix64(mix64(base) ^ replicate.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Generator for column `column` under the key `key`.
pub fn column_rng(key: u64, column: usize) -> Rng {
    let mut rng = Rng::seed_from_u64(key);
    rng.set_stream(column as u64);
    rng
}

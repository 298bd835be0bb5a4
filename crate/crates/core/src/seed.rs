//! Seed derivation. Every random stream in a run is keyed by the master seed
//! plus a few integers, so results never depend on call order or threading.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const TAG_INIT: u64 = 0x494e4954;
pub(crate) const TAG_SAMPLE: u64 = 0x53414d50;
pub(crate) const TAG_CLIENT: u64 = 0x434c4e54;
pub(crate) const TAG_DATA: u64 = 0x44415441;
pub(crate) const TAG_PARTITION: u64 = 0x50415254;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a sequence of stream identifiers.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

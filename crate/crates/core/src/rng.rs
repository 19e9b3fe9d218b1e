//! Counter-style seeding. Every random stream is keyed by `(seed, index)` so
//! results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derived seed for the `index`-th independent task of a job seeded with `seed`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed) ^ index.wrapping_mul(0xD605_BBB5_8C8A_BD7B))
}

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(seed, index))
}

/// Seed that depends only on the bit patterns of a state vector.
pub fn state_seed(salt: u64, x: &[f64]) -> u64 {
    x.iter()
        .fold(mix64(salt), |h, v| mix64(h ^ v.to_bits()))
}

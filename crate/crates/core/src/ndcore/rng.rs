//! Counter-based seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by
//! `mix(master, stream)`, so element `i` of a generated set is a function of
//! `(seed, i)` only and parallel generation matches sequential generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer over the pair.
pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, stream))
}

/// Named sub-streams so independent consumers of one master seed never collide.
pub fn named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    stream_rng(seed, fnv1a(name.as_bytes()))
}

pub fn named_seed(seed: u64, name: &str) -> u64 {
    mix(seed, fnv1a(name.as_bytes()))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

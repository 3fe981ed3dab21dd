//! Counter-keyed random substreams.
//!
//! Every stochastic step draws from a ChaCha stream derived from
//! `(seed, domain, key...)`, so results do not depend on iteration order or
//! on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains. Distinct tags keep unrelated draws independent even when
/// their keys collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    InitialPool = 1,
    CategoryCounts = 2,
    ImageLayout = 3,
    Prototypes = 4,
    Detection = 5,
    FalsePositives = 6,
    ModelRandScore = 7,
    ImageRandom = 8,
    Difficulty = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed, a domain tag and any number of keys into one 64-bit value.
pub fn mix(seed: u64, domain: Domain, keys: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(domain as u64));
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn substream(seed: u64, domain: Domain, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, domain, keys))
}

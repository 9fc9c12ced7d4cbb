//! Seed derivation.
//!
//! Every random decision in a run is drawn from its own ChaCha stream whose seed is
//! a hash of the experiment seed and a tuple of tags (purpose, client, round, ...).
//! Streams never share state, so the order in which clients are scheduled cannot
//! change what any of them draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    DataGen = 1,
    Split = 2,
    Partition = 3,
    Noise = 4,
    ModelInit = 5,
    Shuffle = 6,
    CollabShuffle = 7,
    Participation = 8,
    NoiseRates = 9,
    Client = 10,
    ServerInit = 11,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Hash `base` with `purpose` and `tags` into a new 64-bit seed.
pub fn derive(base: u64, purpose: Purpose, tags: &[u64]) -> u64 {
    let mut h = splitmix64(base ^ 0x6865_7466_6564_0000);
    h = splitmix64(h ^ purpose as u64);
    for &t in tags {
        h = splitmix64(h ^ t);
    }
    h
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shorthand for `rng_from(derive(base, purpose, tags))`.
pub fn stream(base: u64, purpose: Purpose, tags: &[u64]) -> ChaCha8Rng {
    rng_from(derive(base, purpose, tags))
}

//! Deterministic random streams.
//!
//! Every run is driven by a `u64` master seed. Independent sub-streams
//! (replications, policies, workers) use the ChaCha stream counter, so
//! stream `s` of seed `x` never overlaps stream `t != s` of the same seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type EdpmRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> EdpmRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> EdpmRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; used to derive child seeds from `(seed, counter)`.
pub fn derive_seed(seed: u64, counter: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(counter.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

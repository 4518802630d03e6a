//! Seeded random streams.
//!
//! Every parallel unit of work (a replication, a Monte Carlo chunk, a chain)
//! owns its own stream, derived from a master seed and a stream id. Results
//! therefore do not depend on thread count or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream `id` of the generator family keyed by `seed`.
pub fn stream(seed: u64, id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Derive a child seed, used when a stream itself fans out into sub-streams.
pub fn derive_seed(seed: u64, id: u64) -> u64 {
    // splitmix64 finalizer over the pair
    let mut z = seed ^ id.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

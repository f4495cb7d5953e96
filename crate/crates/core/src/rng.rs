//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 seeded with a `u64`. Independent
//! consumers of the same seed draw from distinct ChaCha streams:
//! multistart run `k` uses stream `k`, the reference-profile pool uses
//! [`PROFILE_STREAM`] and diagnostic sampling uses [`DIAGNOSTIC_STREAM`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const PROFILE_STREAM: u64 = u64::MAX;
pub const DIAGNOSTIC_STREAM: u64 = u64::MAX - 1;

pub type Rng = ChaCha8Rng;

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

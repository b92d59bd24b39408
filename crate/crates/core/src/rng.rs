//! Reproducible random streams.
//!
//! Every consumer of randomness gets a private generator keyed by
//! `(seed, domain, a, b)`, typically `(run seed, purpose, particle, step)`.
//! Results therefore do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags keeping streams for different consumers disjoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Transition = 1,
    Initial = 2,
    Resample = 3,
    LoopMeasurement = 4,
    ProbeMeasurement = 5,
    Test = 99,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> StreamRng {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ domain as u64);
    h = splitmix64(h ^ a);
    h = splitmix64(h ^ b);
    ChaCha8Rng::seed_from_u64(h)
}

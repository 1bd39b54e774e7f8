//! Seeded, splittable random streams.
//!
//! Every run derives its generators from one 64-bit seed. Independent
//! consumers (data generation, gradient noise, initialization, parallel
//! seeds of an experiment) take distinct ChaCha stream ids from the same
//! key, so results do not depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids reserved for the harness.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const GRADIENT: u64 = 3;
    /// Oracle instances use `ORACLE + instance_index`.
    pub const ORACLE: u64 = 1 << 32;
}

pub fn stream(seed: u64, id: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

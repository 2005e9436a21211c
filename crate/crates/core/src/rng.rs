//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), a
//! counter-based generator whose output is fixed across platforms. A run seed is split into
//! independent streams by the generator's 64-bit stream selector, so e.g. the dataset and the
//! network initialisation never share state and can be reproduced separately.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers used across the crate.
pub mod streams {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN_BATCHES: u64 = 3;
    pub const TEST_BATCHES: u64 = 4;
    /// Probe pair `i` uses stream `PROBE_BASE + i`.
    pub const PROBE_BASE: u64 = 1 << 32;
    /// Gradient-check trial `i` uses stream `GRADCHECK_BASE + i`.
    pub const GRADCHECK_BASE: u64 = 2 << 32;
}

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

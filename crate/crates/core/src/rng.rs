//! Seeded random streams. Each purpose (prototype placement, sampling,
//! shuffling, views, ...) draws from its own ChaCha stream of a shared seed so
//! that adding draws for one purpose never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod streams {
    pub const PROTOTYPES: u64 = 1;
    pub const SAMPLES: u64 = 2;
    pub const LABELED_SPLIT: u64 = 3;
    pub const HOLDOUT: u64 = 4;
    pub const INIT: u64 = 5;
    /// Per-epoch batch order and view noise, seeded with
    /// `derive_seed(seed, epoch)`.
    pub const SHUFFLE: u64 = 6;
}

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for a derived sub-task (e.g. epoch `e` or probe model `k`).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! Counter-based random streams.
//!
//! Every random draw in the crate is addressed by `(seed, replicate, lane, step)`.
//! A stream is a fresh ChaCha generator seeded from a mix of that address, so the
//! values do not depend on evaluation order or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Lanes separate independent uses of the same replicate key.
pub mod lane {
    pub const OMEGA: u64 = 1;
    pub const STATE: u64 = 2;
    pub const PROBE: u64 = 3;
    pub const BOOTSTRAP: u64 = 4;
    pub const FRAME: u64 = 5;
    pub const CLOUD: u64 = 6;
    pub const CHART: u64 = 7;
    pub const AUDIT: u64 = 8;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub replicate: u64,
}

impl StreamKey {
    pub fn new(seed: u64, replicate: u64) -> Self {
        Self { seed, replicate }
    }

    pub fn with_replicate(self, replicate: u64) -> Self {
        Self { replicate, ..self }
    }

    /// Derived key for a nested family of replicates.
    pub fn child(self, tag: u64) -> Self {
        Self {
            seed: splitmix64(self.seed ^ splitmix64(self.replicate ^ splitmix64(tag))),
            replicate: 0,
        }
    }

    pub fn rng(&self, lane: u64, step: u64) -> ChaCha8Rng {
        let mut state = splitmix64(self.seed)
            ^ splitmix64(self.replicate.wrapping_add(0x9E37_79B9_7F4A_7C15))
            ^ splitmix64(lane.rotate_left(17) ^ 0xD1B5_4A32_D192_ED03)
            ^ splitmix64(step.rotate_left(41) ^ 0x8CB9_2BA7_2F3D_8DD7);
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

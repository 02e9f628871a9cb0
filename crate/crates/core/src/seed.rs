//! Named random streams derived from one master seed.
//!
//! Every consumer of randomness (initialization, the sampling set, the test
//! set, noise, ...) draws from its own ChaCha stream, so adding draws to one
//! stream never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const INIT: &str = "init";
pub const OMEGA: &str = "omega";
pub const GAMMA: &str = "gamma";
pub const VALIDATION: &str = "validation";
pub const NOISE: &str = "noise";
pub const TRUTH: &str = "truth";
pub const RANK_GROWTH: &str = "rank-growth";

/// FNV-1a, used only to map stream names to stream ids.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        SeedStreams { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, name: &str) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(fnv1a(name.as_bytes()));
        rng
    }

    /// Child splitter for a numbered sub-experiment (sweep cell, trial, ...).
    pub fn child(&self, label: &str, index: u64) -> SeedStreams {
        let h = fnv1a(label.as_bytes()) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        SeedStreams {
            master: self.master.rotate_left(17) ^ h,
        }
    }
}

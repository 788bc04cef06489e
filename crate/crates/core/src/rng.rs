//! Seed derivation for reproducible stochastic operations.
//!
//! A [`SeedPath`] is a 64-bit key that can be split into named or indexed
//! children. Every stochastic op receives its own child path, so the random
//! stream it sees depends only on the root seed and its position in the
//! program, never on how many draws other ops made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPath(u64);

impl SeedPath {
    pub fn new(seed: u64) -> Self {
        SeedPath(mix(seed ^ 0x243f_6a88_85a3_08d3))
    }

    pub fn key(self) -> u64 {
        self.0
    }

    pub fn child(self, name: &str) -> Self {
        // FNV-1a over the label, then mixed with the parent key.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in name.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        SeedPath(mix(self.0 ^ mix(h)))
    }

    pub fn index(self, i: u64) -> Self {
        SeedPath(mix(self.0.wrapping_add(mix(i.wrapping_add(0x9e37_79b9_7f4a_7c15)))))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

//! Counter-based random streams.
//!
//! Every simulated path draws from its own ChaCha8 stream whose key is
//! derived from the run seed and the path's lineage (path index, nesting
//! depth, parent sample). Draw order therefore never depends on how work is
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Identifies one random stream: the run seed plus a hash of the lineage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    lineage: u64,
}

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        Self {
            seed,
            lineage: mix(seed ^ 0x5eed),
        }
    }

    /// Key of the `index`-th child stream.
    #[inline]
    pub fn child(self, index: u64) -> Self {
        Self {
            seed: self.seed,
            lineage: mix(self.lineage ^ mix(index.wrapping_add(0x1000_0000_01b3))),
        }
    }

    /// Child stream reserved for a named purpose (random quadrature times,
    /// auxiliary draws); tags live in a separate index space from paths.
    pub fn tagged(self, tag: u64) -> Self {
        self.child(tag ^ 0xa5a5_a5a5_0000_0000)
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        let mut s = self.seed ^ self.lineage.rotate_left(17);
        for chunk in seed.chunks_exact_mut(8) {
            s = mix(s ^ self.lineage);
            chunk.copy_from_slice(&s.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}

pub(crate) const TAG_QUADRATURE: u64 = 1;
pub(crate) const TAG_FRESH: u64 = 2;

//! Keyed random streams.
//!
//! A stream is identified by `(seed, stream_id)`. Child streams are derived
//! by hashing a key path into a new `stream_id`, so a Monte Carlo cell keyed
//! by e.g. `(iteration, purpose, state, action, round)` always sees the same
//! draws no matter which worker thread runs it or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator type handed out by [`RngStream::rng`].
pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

/// Well-separated tags for the different consumers of randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Iteration = 1,
    Comparator = 2,
    ForcedStart = 3,
    RewardPanel = 4,
    UtilityPanel = 5,
    DualRollout = 6,
    DualPanel = 7,
    Sphere = 8,
    BaseRollout = 9,
    PerturbedRollout = 10,
    Environment = 11,
    Advantage = 12,
    Dual = 13,
    Gradient = 14,
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RngStream {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        RngStream { seed, stream_id }
    }

    /// Child stream for `key`. Distinct key paths give distinct streams
    /// with overwhelming probability; the parent seed is kept.
    pub fn derive(&self, key: &[u64]) -> RngStream {
        let mut h = splitmix64(self.stream_id);
        for (i, &k) in key.iter().enumerate() {
            h = splitmix64(h ^ splitmix64(k.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN))));
        }
        RngStream {
            seed: self.seed,
            stream_id: h,
        }
    }

    pub fn child(&self, purpose: Purpose, key: &[u64]) -> RngStream {
        let mut path = Vec::with_capacity(key.len() + 1);
        path.push(purpose as u64);
        path.extend_from_slice(key);
        self.derive(&path)
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

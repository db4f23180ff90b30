//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha stream addressed
//! by `(seed, replication, purpose, index)`. Two computations that ask for the
//! same address see the same numbers no matter which thread runs them or in
//! which order, which is what makes Monte Carlo runs reproducible across
//! worker counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. The discriminant is part of the stream address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Purpose {
    Data = 1,
    Split = 2,
    FunctionDraw = 3,
    Bootstrap = 4,
    TrueEffect = 5,
    Misc = 6,
}

/// Root of a family of streams: a user seed and a replication index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct StreamKey {
    pub seed: u64,
    pub replication: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey {
            seed,
            replication: 0,
        }
    }

    pub fn replication(seed: u64, replication: u64) -> Self {
        StreamKey { seed, replication }
    }

    /// Independent generator for `(purpose, index)` under this key.
    pub fn stream(&self, purpose: Purpose, index: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.replication.to_le_bytes());
        key[16] = purpose as u8;
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}

//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 keystream addressed by
//! `(seed, purpose, replica)`: the seed and purpose form the key, the replica
//! index selects the stream, and the block counter advances inside it. A
//! replica therefore sees the same numbers no matter which worker thread runs
//! it or in which order replicas are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share a key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Environment = 1,
    Walk = 2,
    Clock = 3,
    Skeleton = 4,
    KProcess = 5,
    InitialState = 6,
    Particles = 7,
    Experiment = 8,
    Oracle = 9,
}

/// Address of an independent random stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub purpose: Purpose,
    pub replica: u64,
}

impl RngStream {
    pub fn new(seed: u64, purpose: Purpose, replica: u64) -> Self {
        Self { seed, purpose, replica }
    }

    /// A fresh generator positioned at counter zero of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(self.purpose as u64).to_le_bytes());
        key[16..24].copy_from_slice(b"trapsim\0");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.replica);
        rng
    }
}

/// Shorthand for `RngStream::new(seed, purpose, replica).rng()`.
pub fn stream(seed: u64, purpose: Purpose, replica: u64) -> ChaCha8Rng {
    RngStream::new(seed, purpose, replica).rng()
}

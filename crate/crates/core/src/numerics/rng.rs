//! Keyed random-number streams.
//!
//! Every stream is a ChaCha8 generator whose 256-bit key is the tuple
//! `(root_seed, replication, subject, purpose)`. Two streams with different
//! ids are unrelated keystreams; the same id always replays the same
//! sequence, regardless of which thread or in which order it is created.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// What a stream is used for. Folded into the key so that, e.g., the Gibbs
/// chain for one estimator never shares draws with another's imputations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    Simulate,
    Truth,
    Gibbs(u8),
    Impute(u8),
    Diagnose,
    /// Free-form tag for tests and examples.
    Custom(u32),
}

impl Purpose {
    pub fn tag(self) -> u64 {
        match self {
            Purpose::Simulate => 1 << 40,
            Purpose::Truth => 2 << 40,
            Purpose::Gibbs(e) => (3 << 40) | u64::from(e),
            Purpose::Impute(e) => (4 << 40) | u64::from(e),
            Purpose::Diagnose => 5 << 40,
            Purpose::Custom(c) => (6 << 40) | u64::from(c),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub replication: u64,
    pub subject: u64,
    pub purpose: Purpose,
}

impl StreamId {
    pub fn new(replication: u64, subject: u64, purpose: Purpose) -> Self {
        StreamId {
            replication,
            subject,
            purpose,
        }
    }
}

/// A single-owner random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    root_seed: u64,
    id: StreamId,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(root_seed: u64, id: StreamId) -> Self {
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&root_seed.to_le_bytes());
        key[8..16].copy_from_slice(&id.replication.to_le_bytes());
        key[16..24].copy_from_slice(&id.subject.to_le_bytes());
        key[24..32].copy_from_slice(&id.purpose.tag().to_le_bytes());
        RngStream {
            root_seed,
            id,
            inner: ChaCha8Rng::from_seed(key),
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn id(&self) -> StreamId {
        self.id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Hands out streams for one replication.
#[derive(Debug, Clone, Copy)]
pub struct StreamFactory {
    pub root_seed: u64,
    pub replication: u64,
}

impl StreamFactory {
    pub fn new(root_seed: u64, replication: u64) -> Self {
        StreamFactory {
            root_seed,
            replication,
        }
    }

    pub fn stream(&self, subject: u64, purpose: Purpose) -> RngStream {
        RngStream::new(
            self.root_seed,
            StreamId::new(self.replication, subject, purpose),
        )
    }
}

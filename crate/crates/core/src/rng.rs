//! Hierarchical random sub-streams.
//!
//! Every unit of bootstrap work draws from its own ChaCha stream whose key is
//! derived from the root seed and a path of indices, so results do not depend
//! on scheduling or on how many workers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubStream {
    seed: u64,
    path: Vec<u64>,
}

impl SubStream {
    pub fn root(seed: u64) -> Self {
        Self { seed, path: Vec::new() }
    }

    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self { seed: self.seed, path }
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(b"rsboot-substream");
        hasher.update(self.seed.to_le_bytes());
        hasher.update((self.path.len() as u64).to_le_bytes());
        for p in &self.path {
            hasher.update(p.to_le_bytes());
        }
        let key: [u8; 32] = hasher.finalize().into();
        ChaCha8Rng::from_seed(key)
    }
}

//! Named, reproducible random streams.
//!
//! A stream is identified by a master seed and a path of names such as
//! `split/3/calibration-u`. The path is hashed with SHA-256 into a ChaCha20
//! key, so draws depend only on `(seed, path)` and are identical on every
//! platform. Sibling streams never overlap.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub const CALIBRATION_U: &str = "calibration-u";
pub const TEST_U: &str = "test-u";
pub const SPLIT: &str = "split";
pub const INIT: &str = "init";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RngState {
    seed: u64,
    stream: String,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            stream: String::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> &str {
        &self.stream
    }

    /// Child stream `name` under this one.
    pub fn derive(&self, name: &str) -> Self {
        let stream = if self.stream.is_empty() {
            name.to_string()
        } else {
            format!("{}/{}", self.stream, name)
        };
        Self {
            seed: self.seed,
            stream,
        }
    }

    /// Child stream `name/index`, e.g. the i-th split or trial.
    pub fn derive_indexed(&self, name: &str, index: usize) -> Self {
        self.derive(&format!("{name}/{index}"))
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn generator(&self) -> ChaCha20Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(self.stream.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        ChaCha20Rng::from_seed(key)
    }

    /// `n` draws from U[0, 1).
    pub fn uniforms(&self, n: usize) -> Vec<f64> {
        let mut rng = self.generator();
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    /// Uniformly random permutation of `0..n`.
    pub fn permutation(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut self.generator());
        idx
    }
}

//! Deterministic per-component random streams.
//!
//! Every stream is keyed by `(root seed, label, index)` and derived through
//! SHA-256, so a stream's contents do not depend on the order in which other
//! streams are created or on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream(root_seed: u64, label: &str, index: u64) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

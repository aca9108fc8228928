//! Keyed random streams. Every stream is a ChaCha generator whose key is the
//! SHA-256 of the master seed and a label, so a zone's stream depends only on
//! `(seed, label)` and never on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, label: &str) -> StreamRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Stream for one zone within a named stage.
pub fn zone_stream(seed: u64, stage: &str, zone_id: &str) -> StreamRng {
    stream(seed, &format!("{stage}\u{1f}{zone_id}"))
}

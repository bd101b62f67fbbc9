//! Deterministic random streams.
//!
//! Every consumer of randomness draws from a ChaCha20 stream keyed by
//! `SHA-256(master seed ‖ purpose label ‖ index)`. ChaCha20 output is fully
//! specified and platform independent, and deriving keys from a stable label
//! means adding a new consumer never perturbs the streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha20Rng;

pub fn stream(master_seed: u64, label: &str, index: u64) -> Stream {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}

/// Derives a child seed, for components that take a plain `u64` seed.
pub fn derive_seed(master_seed: u64, label: &str, index: u64) -> u64 {
    use rand::RngCore;
    stream(master_seed, label, index).next_u64()
}

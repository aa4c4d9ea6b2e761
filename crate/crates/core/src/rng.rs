//! Deterministic random streams.
//!
//! All randomness in the crate derives from a single master seed through
//! labeled substreams. A substream is a ChaCha20 generator keyed with
//! SHA-256(master_seed || label), so streams with different labels are
//! independent and every draw is reproducible across runs and platforms.
//!
//! Labels in use include `party-{k}-projection`, `party-{k}-noise`,
//! `party-{k}-sdca-permutation`, `train-test-split`, `cv-folds`,
//! `cv-fold-{f}-party-{k}-projection` and `replicate-{s}` (one sub-master
//! per experiment repetition).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Generator for the (master seed, label) substream.
pub fn substream(master_seed: u64, label: &str) -> ChaCha20Rng {
    ChaCha20Rng::from_seed(stream_key(master_seed, label))
}

/// A 64-bit sub-seed for the (master seed, label) substream, for APIs that
/// take a seed rather than a generator.
pub fn subseed(master_seed: u64, label: &str) -> u64 {
    let key = stream_key(master_seed, label);
    u64::from_le_bytes(key[..8].try_into().unwrap())
}

fn stream_key(master_seed: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.finalize().into()
}

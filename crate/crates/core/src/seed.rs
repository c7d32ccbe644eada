//! Deterministic sub-seed derivation.
//!
//! Every stochastic job (a fold, a split, a grid repeat, a synthetic patient)
//! draws from its own generator seeded by `derive(master, label)`. The
//! derived seed is the first eight bytes (little-endian) of
//! `SHA-256(master.to_le_bytes() || label)`, so a job's randomness depends
//! only on the master seed and its label, never on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, label: &str) -> ChaCha8Rng {
    rng(derive(master, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_separate_streams() {
        assert_eq!(derive(7, "fold-0"), derive(7, "fold-0"));
        assert_ne!(derive(7, "fold-0"), derive(7, "fold-1"));
        assert_ne!(derive(7, "fold-0"), derive(8, "fold-0"));
    }
}

//! Seed derivation for reproducible, independent runs.

use sha2::{Digest, Sha256};

/// Seed of run `r` (0-based).
pub fn run_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add(r as u64)
}

/// Independent stream seed for one purpose within a run, e.g. `"layout"`.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("32-byte digest"))
}

//! Hierarchical seed derivation.

use sha2::{Digest, Sha256};

/// Child seed for `label` under `seed`; stable across platforms and runs.
pub fn derive(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

//! Stable seed derivation. One global seed is fanned out to stages and
//! instances by hashing, so results never depend on iteration or thread order.

use sha2::{Digest, Sha256};

/// Derive a child seed from a parent seed and a label.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Hex SHA-256 of arbitrary bytes.
pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Salted, truncated hash used to anonymize source identifiers.
pub fn anonymize(salt: &str, source_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(salt.as_bytes());
    h.update([0u8]);
    h.update(source_id.as_bytes());
    hex::encode(&h.finalize()[..12])
}

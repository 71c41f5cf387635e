//! Stable hashing for seeds, mocks, and manifests.
//!
//! Everything that must reproduce byte-identically across runs (mock
//! backends, derived stage seeds, artifact manifests) hashes through
//! SHA-256 rather than `std::hash`, whose output is not guaranteed stable
//! across Rust releases.

use sha2::{Digest, Sha256};

/// Hash a sequence of byte chunks to a stable 64-bit value.
///
/// Chunks are length-prefixed so that `["ab", "c"]` and `["a", "bc"]`
/// hash differently.
pub fn stable_hash64(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Derive a per-purpose seed from a global seed and a purpose tag
/// (typically a stage name), so one global seed drives the whole pipeline.
pub fn derive_seed(global_seed: u64, purpose: &str) -> u64 {
    stable_hash64(&[&global_seed.to_le_bytes(), purpose.as_bytes()])
}

/// Hex-encoded SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

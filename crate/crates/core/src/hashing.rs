//! Fixed, platform-independent hashing used for content addresses, mock
//! determinism, and seed derivation.
//!
//! Everything here is SHA-256. A `u64` view of a digest is its first eight
//! bytes read big-endian.

use sha2::{Digest, Sha256};

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over a sequence of parts, each length-prefixed so that
/// `["ab", "c"]` and `["a", "bc"]` hash differently.
pub fn digest_parts(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

/// First eight bytes of `digest_parts(parts)`, big-endian.
pub fn hash_u64(parts: &[&[u8]]) -> u64 {
    let digest = digest_parts(parts);
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Derive a named sub-stream seed from a root seed.
///
/// `substream_seed(root, &["images", prompt_id])` is stable across runs and
/// platforms, so any single stream can be regenerated without replaying the
/// others.
pub fn substream_seed(root: u64, names: &[&str]) -> u64 {
    let root_bytes = root.to_le_bytes();
    let mut parts: Vec<&[u8]> = Vec::with_capacity(names.len() + 1);
    parts.push(&root_bytes);
    parts.extend(names.iter().map(|n| n.as_bytes()));
    hash_u64(&parts)
}

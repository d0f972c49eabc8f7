//! Short content hashes used to tie output files to their inputs.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("fingerprinted values serialize");
    Sha256::digest(&bytes)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// 64-bit seed derived from the same hash.
pub fn seed_from<T: Serialize + ?Sized>(value: &T) -> u64 {
    u64::from_str_radix(&fingerprint(value), 16).expect("hex digest")
}

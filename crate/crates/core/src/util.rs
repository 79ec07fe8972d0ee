//! Small shared helpers: named random streams and content fingerprints.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Independent RNG stream derived from a top-level seed and a stream name.
///
/// The stream seed is `SHA-256(seed as little-endian u64 || name)`, so adding a
/// new consumer with a new name never perturbs existing streams.
pub fn stream_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Short hex fingerprint of any serializable value (first 16 hex digits of
/// the SHA-256 of its JSON encoding).
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("fingerprinted values serialize");
    let digest = Sha256::digest(&json);
    hex::encode(&digest[..8])
}

/// Full SHA-256 of a byte string, hex encoded.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Snap a load ratio to the nearest 1e-9 so that grid arithmetic such as
/// `0.90 - 0.25` compares equal to the literal level.
pub fn snap(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Tolerant equality for load ratios.
pub fn same_ratio(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

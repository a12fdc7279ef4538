//! Seed handling. All randomness in a run flows from one config seed through
//! named sub-streams, so each pipeline stage is reproducible on its own.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive an independent RNG for `name` from the run seed.
///
/// The stream seed is SHA-256(seed || name), so streams do not overlap and
/// the mapping is stable across platforms.
pub fn stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Hex SHA-256 of a canonical config serialization, truncated to 16 chars.
/// Embedded in datasets, checkpoints and series files to tie artifacts to
/// the configuration that produced them.
pub fn config_hash(canonical: &str) -> String {
    let mut h = Sha256::new();
    h.update(canonical.as_bytes());
    let digest = h.finalize();
    let mut s = String::with_capacity(16);
    for b in digest.iter().take(8) {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let mut a = stream(7, "noise");
        let mut b = stream(7, "noise");
        let mut c = stream(7, "init");
        let xa: f64 = a.gen();
        let xb: f64 = b.gen();
        let xc: f64 = c.gen();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(config_hash("x"), config_hash("x"));
        assert_ne!(config_hash("x"), config_hash("y"));
        assert_eq!(config_hash("x").len(), 16);
    }
}

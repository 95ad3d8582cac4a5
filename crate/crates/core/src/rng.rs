//! Seed-stream derivation.
//!
//! Every source of randomness in a run is a named stream derived from the run
//! seed, so results are independent of scheduling or evaluation order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// 64-bit FNV-1a over a byte slice. Stable across runs and platforms.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Derive a child seed from a base seed and a textual stream tag.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    let mut buf = Vec::with_capacity(8 + tag.len());
    buf.extend_from_slice(&seed.to_le_bytes());
    buf.extend_from_slice(tag.as_bytes());
    fnv1a64(&buf)
}

/// A deterministic RNG for the stream named by `tag` under `seed`.
pub fn stream(seed: u64, tag: &str) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(seed, tag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_stable() {
        let mut a = stream(7, "explore/i1/ctx3");
        let mut b = stream(7, "explore/i1/ctx3");
        let xs: Vec<u64> = (0..8).map(|_| a.gen()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.gen()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn distinct_tags_give_distinct_streams() {
        let mut a = stream(7, "explore/i1/ctx3");
        let mut b = stream(7, "explore/i1/ctx4");
        let x: u64 = a.gen();
        let y: u64 = b.gen();
        assert_ne!(x, y);
    }

    #[test]
    fn fnv_reference_values() {
        // Reference vectors for the canonical FNV-1a 64 parameters.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }
}

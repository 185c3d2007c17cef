//! Deterministic hashing and seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is
//! derived with [`mix`], so results depend only on the inputs and never on
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// FNV-1a over the little-endian encodings of `a`, `b` and `c`, concatenated.
pub fn mix(a: u64, b: u64, c: u64) -> u64 {
    let mut buf = [0u8; 24];
    buf[..8].copy_from_slice(&a.to_le_bytes());
    buf[8..16].copy_from_slice(&b.to_le_bytes());
    buf[16..].copy_from_slice(&c.to_le_bytes());
    fnv1a(&buf)
}

/// Hash of a sentence's UTF-8 text, used as the per-sentence seed component.
pub fn sentence_hash(sentence: &str) -> u64 {
    fnv1a(sentence.as_bytes())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A named sub-stream of `seed`; different names give independent streams.
pub fn named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    rng(mix(seed, fnv1a(name.as_bytes()), 0))
}

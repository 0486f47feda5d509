//! Deterministic derivation of per-component RNG streams from one root seed.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// Derive an independent ChaCha stream from `(root, label, index)`.
///
/// The same triple always yields the same stream, so components (env, init,
/// sampler, per-episode noise, per-point sweeps) can be re-run in any order
/// without perturbing each other.
pub fn stream(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[..8].copy_from_slice(&root.to_le_bytes());
    seed[8..16].copy_from_slice(&index.to_le_bytes());
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x100000001b3);
    }
    seed[16..24].copy_from_slice(&h.to_le_bytes());
    ChaCha8Rng::from_seed(seed)
}

//! Seeded randomness. Every stochastic routine takes a 64-bit seed or a
//! `ChaCha20Rng` built from one, so results are pure functions of their inputs.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type Rng = ChaCha20Rng;

/// Name of the generator, recorded in manifests.
pub const RNG_NAME: &str = "chacha20";

pub fn from_seed(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// 64-bit FNV-1a hash of a module name.
pub fn name_hash(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Per-module seed: `seed + fnv1a(module)` with wrapping addition.
pub fn derive_seed(seed: u64, module: &str) -> u64 {
    seed.wrapping_add(name_hash(module))
}

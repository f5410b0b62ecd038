//! Hierarchical seed derivation. Every random stream in the crate is a
//! ChaCha8 generator keyed by a 64-bit seed mixed from a parent seed and a
//! stream tag, so results do not depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(parent, stream, index)`.
pub fn derive_seed(parent: u64, stream: &str, index: u64) -> u64 {
    let mut h = mix64(parent);
    for b in stream.bytes() {
        h = mix64(h ^ u64::from(b));
    }
    mix64(h ^ mix64(index))
}

pub fn stream(parent: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parent, name, index))
}

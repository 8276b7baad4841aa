//! Seed derivation: every stochastic step owns a generator derived from a
//! master seed and a stream label, so results do not depend on call order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    let mut h = mix(seed);
    for b in stream.bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ index)
}

pub fn stream(seed: u64, stream_name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream_name, index))
}

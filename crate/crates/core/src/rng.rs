//! Keyed random streams.
//!
//! Every random decision in the crate draws from a stream derived from a base
//! seed plus a small tuple of integers naming the decision site, so outputs do
//! not depend on iteration or thread scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a key path into a single 64-bit value.
pub fn mix(seed: u64, key: &[u64]) -> u64 {
    key.iter()
        .fold(splitmix64(seed), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// Returns an independent generator for `(seed, key...)`.
pub fn stream(seed: u64, key: &[u64]) -> StreamRng {
    let mut bytes = [0u8; 32];
    let mut state = mix(seed, key);
    for chunk in bytes.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    StreamRng::from_seed(bytes)
}

/// Stable 64-bit tag for a string, used to separate streams by purpose.
pub fn tag(name: &str) -> u64 {
    name.bytes()
        .fold(0xCBF2_9CE4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01B3))
}

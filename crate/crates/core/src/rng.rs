//! Counter-based, splittable random streams.
//!
//! Every random draw in the crate comes from a stream keyed by a base seed and
//! a short path of tags (module, phase, user, episode, ...). Two callers that
//! derive the same key get bit-identical streams regardless of the order in
//! which they run, so parallel and serial executions agree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stable 64-bit tag for a string label (FNV-1a).
pub const fn tag(label: &str) -> u64 {
    let bytes = label.as_bytes();
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut i = 0;
    while i < bytes.len() {
        hash ^= bytes[i] as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
        i += 1;
    }
    hash
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a seed with a path of tags into a single 64-bit key.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    let mut key = splitmix(seed);
    for &p in path {
        key = splitmix(key ^ splitmix(p));
    }
    key
}

/// A fresh stream for `(seed, path...)`.
pub fn stream(seed: u64, path: &[u64]) -> Stream {
    Stream::seed_from_u64(derive_key(seed, path))
}

//! Seed plumbing. Every random stream is derived from one root seed and a
//! stream name, so components never share generator state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream `name` under `root`.
pub fn stream_seed(root: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the root.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(root ^ splitmix64(h))
}

/// Seed of the `index`-th member of a stream family (e.g. one per env).
pub fn indexed_seed(root: u64, name: &str, index: u64) -> u64 {
    splitmix64(stream_seed(root, name) ^ splitmix64(index.wrapping_add(1)))
}

pub fn stream(root: u64, name: &str) -> Rng {
    Rng::seed_from_u64(stream_seed(root, name))
}

pub fn indexed_stream(root: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(indexed_seed(root, name, index))
}

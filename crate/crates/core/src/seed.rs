//! Seed streams.
//!
//! A master seed fans out into named streams with
//! `stream_seed(master, name) = splitmix64(master ^ fnv1a64(name))`, and a
//! stream into per-item seeds with
//! `item_seed(seed, i) = splitmix64(seed + (i + 1)·0x9E3779B97F4A7C15)`.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn fnv1a64(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn stream_seed(master: u64, name: &str) -> u64 {
    splitmix64(master ^ fnv1a64(name))
}

pub fn item_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

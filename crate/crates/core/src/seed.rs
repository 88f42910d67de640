//! Seed derivation. Every random stream in a run is derived from one master
//! seed plus a label, so streams stay independent of each other's usage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    fnv1a_from(FNV_OFFSET, bytes)
}

fn fnv1a_from(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the stream named `label` under `seed`.
pub fn derive(seed: u64, label: &str) -> u64 {
    mix(fnv1a_from(fnv1a(&seed.to_le_bytes()), label.as_bytes()))
}

/// Seed for the stream named `label` under `seed`, further keyed by indices.
pub fn derive_indexed(seed: u64, label: &str, idx: &[u64]) -> u64 {
    let mut h = derive(seed, label);
    for &i in idx {
        h = mix(h ^ mix(i.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

pub fn rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, label))
}

pub fn rng_indexed(seed: u64, label: &str, idx: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_indexed(seed, label, idx))
}

//! Small shared helpers.

/// splitmix64 step; the seed-derivation workhorse.
pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic seed from a chain of parts; order-sensitive.
pub(crate) fn derive_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x5bd1_e995_9e37_79b9u64;
    for &p in parts {
        acc = splitmix64(acc ^ p);
    }
    acc
}

//! Deterministic seed derivation.
//!
//! Every randomized stage derives its own RNG seed from a master seed, a
//! string tag naming the stream, and an integer index. Keyed by content
//! (building name, trial id) rather than position, so adding trials to a
//! dataset never shifts the seeds of existing ones.

/// SplitMix64 finalizer; full-period bijection on u64.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a hash of a byte string.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from `(master, tag, index)`.
///
/// `derive(m, t, i) = splitmix64(m ^ splitmix64(fnv1a(t) ^ splitmix64(i)))`
pub fn derive(master: u64, tag: &str, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a(tag.as_bytes()) ^ splitmix64(index)))
}

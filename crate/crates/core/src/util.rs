//! Small helpers shared across modules.

/// 64-bit FNV-1a. Used wherever a hash has to be stable across builds and
/// platforms (feature buckets, seed derivation).
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a list of labels.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = mix64(seed);
    for p in parts {
        h = mix64(h ^ fnv1a(p.as_bytes()));
    }
    h
}

/// Renders a percentage with exactly two decimals.
pub fn percent(value: f64) -> String {
    format!("{value:.2}")
}

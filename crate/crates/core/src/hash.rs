//! Small stable hashing utilities.
//!
//! Everything downstream that needs a deterministic fingerprint (embedding
//! buckets, UI-state digests, cache keys) goes through the 64-bit FNV-1a
//! implementation here so results are reproducible across platforms and
//! releases, unlike `std::collections::hash_map::DefaultHasher`.

/// FNV-1a offset basis (64-bit variant).
const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
/// FNV-1a prime (64-bit variant).
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a hash of a byte slice.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Hex digest of a string: 16 lowercase hex characters of [`fnv1a64`].
pub fn digest16(text: &str) -> String {
    format!("{:016x}", fnv1a64(text.as_bytes()))
}

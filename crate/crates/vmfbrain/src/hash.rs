//! Stable 64-bit content hashing (FNV-1a) for manifests and
//! checkpoints.
//!
//! The standard library's `Hasher` values are not guaranteed stable
//! across releases, so artifact files carry this fixed, documented hash
//! instead.

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

/// FNV-1a over a byte slice.
pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

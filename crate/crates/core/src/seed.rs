//! Sub-seed derivation.
//!
//! Every random stream derives its seed from the single run seed as
//! `splitmix64(seed ^ fnv1a64(stream) ^ splitmix64(index))`, so streams
//! (signatures, per-video content, shuffling, initialisation) stay
//! reproducible independently of each other.

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a of `bytes`.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

pub fn derive_seed(seed: u64, stream: &str, index: u64) -> u64 {
    splitmix64(seed ^ fnv1a64(stream.as_bytes()) ^ splitmix64(index))
}

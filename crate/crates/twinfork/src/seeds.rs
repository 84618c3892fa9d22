//! Seed derivation shared by the scheduler, fault injection, and the
//! repetition harness. Plain integer mixing keeps derived seeds identical
//! across platforms and builds.

/// SplitMix64 finalizer: a cheap, well-distributed 64-bit mixer.
pub(crate) fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-stream seed: `master` split into independent lanes,
/// one per `stream` index.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    mix64(master ^ mix64(stream))
}

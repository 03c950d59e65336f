//! Deterministic derivation of per-item RNG seeds.
//!
//! Parallel stages (tree training, contract generation) give every item
//! its own RNG stream derived from `(seed, index)`, so serial and
//! parallel execution produce identical output.

/// Mix a base seed with an item index into an independent stream seed.
///
/// Splitmix64 finalizer over the combined value; stable across platforms
/// and rand versions.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

//! Sortable identifiers.

use ulid::Ulid;

/// Returns a fresh 26-character, creation-ordered identifier.
pub fn new_id() -> String {
    Ulid::new().to_string()
}

/// `n` fresh identifiers in strictly increasing order.
pub fn new_ids(n: usize) -> Vec<String> {
    let mut generator = ulid::Generator::new();
    (0..n)
        .map(|_| generator.generate().unwrap_or_else(|_| Ulid::new()).to_string())
        .collect()
}

/// Derives a per-item seed from a base seed and an index.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over seed xor index
    let mut z = (seed ^ index).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

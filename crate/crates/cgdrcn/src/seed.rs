//! Deterministic seed derivation.
//!
//! All randomness in the crate flows from a single user-supplied seed.
//! Sub-systems (weight init, patch sampling, per-scene generation, ...)
//! derive their own streams by mixing the root seed with a fixed label via
//! splitmix64, so results stay identical regardless of evaluation order or
//! thread count.

/// One splitmix64 step: a bijective 64-bit finalizer with good avalanche.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from `root` and a stream label.
pub fn derive(root: u64, label: &str) -> u64 {
    let mut h = root;
    for &b in label.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h)
}

/// Derive a child seed from `root`, a stream label, and an index
/// (per-scene, per-image, ... streams).
pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive(root, label) ^ index)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derive_is_stable_and_label_sensitive() {
        assert_eq!(derive(7, "init"), derive(7, "init"));
        assert_ne!(derive(7, "init"), derive(7, "patches"));
        assert_ne!(derive(7, "init"), derive(8, "init"));
    }

    #[test]
    fn indexed_streams_do_not_collide_on_small_ranges() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..1000 {
            assert!(seen.insert(derive_indexed(42, "scene", i)));
        }
    }
}

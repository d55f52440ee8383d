//! Reproducible seed derivation.
//!
//! A child seed is `mix64(master ^ mix64(fnv1a64(label)))`, where `fnv1a64`
//! is 64-bit FNV-1a over the UTF-8 bytes of the label and `mix64` is the
//! SplitMix64 step (add `0x9E3779B97F4A7C15`, then the xor-shift/multiply
//! finalizer). Both are fixed-width integer arithmetic, so seeds are stable
//! across platforms. Random streams are ChaCha8 seeded from the child seed.
//!
//! Labels in use: `gen`, `level:<i>`, `mc:<trial>`, `trace:<j>`, `run`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, label: &str) -> u64 {
    mix64(master ^ mix64(fnv1a64(label.as_bytes())))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_rng(master: u64, label: &str) -> Rng {
    rng_from_seed(derive_seed(master, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn stable_and_label_sensitive() {
        assert_eq!(derive_seed(42, "level:0"), derive_seed(42, "level:0"));
        assert_ne!(derive_seed(42, "level:0"), derive_seed(42, "level:1"));
        assert_ne!(derive_seed(42, "gen"), derive_seed(43, "gen"));
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn golden_gen_seed() {
        assert_eq!(derive_seed(0, "gen"), GOLDEN_GEN_SEED);
    }

    // Frozen; cross-checked against an independent SplitMix64/FNV-1a script.
    const GOLDEN_GEN_SEED: u64 = 1_890_281_039_044_920_953;

    #[test]
    fn no_collisions_over_many_labels() {
        let mut seen = HashSet::with_capacity(1 << 20);
        for i in 0..1_000_000u32 {
            assert!(seen.insert(derive_seed(7, &format!("mc:{i}"))), "collision at {i}");
        }
    }
}

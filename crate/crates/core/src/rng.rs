//! Hashing and seeding helpers shared by the simulator and the trainers.
//!
//! The simulator relies on FNV-1a-64 and SplitMix64 so that any other
//! implementation of the wire protocol can reproduce its numbers bit for bit.
//! Everything else draws from ChaCha8 streams derived from one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// First output of a SplitMix64 generator whose state is initialised to `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps the top 53 bits of `x` onto `[0, 1)`.
pub fn unit_float(x: u64) -> f64 {
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Seed of the named sub-stream of `root`.
pub fn derive_seed(root: u64, stream: &str) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a64(stream.as_bytes())))
}

/// Deterministic generator for the named sub-stream of `root`.
pub fn stream(root: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn splitmix_reference_vector() {
        // Generator seeded with 0 yields 0xE220A8397B1DCDAF first.
        assert_eq!(splitmix64(0), 0xE220A8397B1DCDAF);
    }

    #[test]
    fn unit_float_range() {
        assert_eq!(unit_float(0), 0.0);
        assert!(unit_float(u64::MAX) < 1.0);
    }

    #[test]
    fn streams_are_distinct() {
        assert_ne!(derive_seed(7, "kg"), derive_seed(7, "nnexp"));
        assert_eq!(derive_seed(7, "kg"), derive_seed(7, "kg"));
    }
}

//! Counter-based seed derivation.
//!
//! Every random stream in the crate is a `ChaCha8Rng` seeded from a master
//! seed and a path of integer tags, e.g. `(master, [SCGF, s_index, replica,
//! window, clone])`. The derivation folds each tag into the state with the
//! SplitMix64 finalizer, so streams never depend on scheduling or on how many
//! numbers another stream consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Tag namespaces for the top-level consumers of randomness.
pub mod tag {
    pub const INITIAL_STATE: u64 = 1;
    pub const DYNAMICS: u64 = 2;
    pub const REPLICA: u64 = 3;
    pub const CLONE: u64 = 4;
    pub const RESAMPLE: u64 = 5;
    pub const QUADRATURE: u64 = 6;
    pub const OPTIMIZER: u64 = 7;
    pub const RELAX: u64 = 8;
    pub const REESTIMATE: u64 = 9;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_for(master: u64, tags: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, tags))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_order_sensitive_and_stable() {
        assert_eq!(derive_seed(7, &[1, 2]), derive_seed(7, &[1, 2]));
        assert_ne!(derive_seed(7, &[1, 2]), derive_seed(7, &[2, 1]));
        assert_ne!(derive_seed(7, &[1]), derive_seed(8, &[1]));
        let a: u64 = rng_for(3, &[tag::CLONE, 0]).random();
        let b: u64 = rng_for(3, &[tag::CLONE, 0]).random();
        assert_eq!(a, b);
    }
}

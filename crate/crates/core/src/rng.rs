//! Seed management. Every random draw in the toolkit derives from one root seed, split
//! per component with a stable hash so that adding a consumer never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives a child seed from `root` for the component `label` and instance `index`.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn rng_for(root: u64, label: &str, index: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, index))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(7, "synth", 0), derive_seed(7, "synth", 0));
        assert_ne!(derive_seed(7, "synth", 0), derive_seed(7, "synth", 1));
        assert_ne!(derive_seed(7, "synth", 0), derive_seed(7, "folds", 0));
        let a: f64 = rng_for(1, "x", 2).random();
        let b: f64 = rng_for(1, "x", 2).random();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

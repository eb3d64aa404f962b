//! Per-path random streams.
//!
//! Each path owns a ChaCha8 stream selected by `(seed, path index)`. ChaCha is
//! a counter-based generator, so a path's draws never depend on how paths are
//! distributed across workers. Every simulation step consumes a fixed number
//! of draws, which keeps common random numbers aligned across starting
//! points, horizons and penalization levels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

#[derive(Clone, Debug)]
pub struct PathRng(ChaCha8Rng);

impl PathRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        PathRng(rng)
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    /// Uniform on (0, 1].
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        1.0 - self.0.random::<f64>()
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }
}

/// Deterministic sub-seed for an independent job labelled `label`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = PathRng::new(7, 3);
        let mut b = PathRng::new(7, 3);
        let mut c = PathRng::new(7, 4);
        let xa: Vec<f64> = (0..5).map(|_| a.normal()).collect();
        let xb: Vec<f64> = (0..5).map(|_| b.normal()).collect();
        let xc: Vec<f64> = (0..5).map(|_| c.normal()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn uniform_open_excludes_zero() {
        let mut r = PathRng::new(1, 0);
        for _ in 0..10_000 {
            let u = r.uniform_open();
            assert!(u > 0.0 && u <= 1.0);
        }
    }

    #[test]
    fn derived_seeds_depend_on_label() {
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_ne!(derive_seed(1, "a"), derive_seed(2, "a"));
    }
}

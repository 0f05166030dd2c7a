//! Seed derivation for reproducible, parallel-safe random streams.
//!
//! The generator is ChaCha8: seedable, portable, and documented, so the same
//! master seed reproduces the same outputs on every platform. Per-image
//! streams are derived by hashing (master_seed, image_id, repetition), which
//! makes results independent of worker scheduling order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for one (image, repetition) work unit.
pub fn derive_stream(master_seed: u64, image_id: &str, repetition: u32) -> Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(image_id.as_bytes());
    hasher.update([0u8]);
    hasher.update(repetition.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

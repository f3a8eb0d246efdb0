//! Named seed derivation. Every random stream in the pipeline is keyed by
//! the master seed plus a path of labels (stage, model, arm, fruit, view),
//! so results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a child seed from `master` and a sequence of labels.
pub fn derive_seed<S: AsRef<str>>(master: u64, labels: &[S]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for label in labels {
        let bytes = label.as_ref().as_bytes();
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng_for<S: AsRef<str>>(master: u64, labels: &[S]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, labels))
}

/// Hex SHA-256 of arbitrary bytes; used for config and cache keys.
pub fn content_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

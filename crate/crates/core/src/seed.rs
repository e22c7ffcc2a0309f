//! Stable seed derivation.
//!
//! Worker-independent reproducibility needs seeds that depend only on
//! `(base_seed, utterance_id, variant_index)`, never on scheduling order.

use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from a base seed and a list of labelled parts.
pub fn derive_seed(base: u64, parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Seed for variant `variant` of utterance `utterance_id`.
pub fn variant_seed(base: u64, utterance_id: &str, variant: usize) -> u64 {
    derive_seed(
        base,
        &[utterance_id.as_bytes(), &(variant as u64).to_le_bytes()],
    )
}

/// Splits one seed into an independent labelled sub-stream.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    derive_seed(seed, &[label.as_bytes()])
}

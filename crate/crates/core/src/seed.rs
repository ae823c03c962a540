//! Seed derivation.
//!
//! Every random stream in the crate comes from one base seed mixed with
//! string labels through SHA-256, so results do not depend on scheduling or
//! worker count. A (video, expression) unit uses `derive_seed(base, &[video_id,
//! expression_id])`; per-frame streams further mix in the frame index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for label in labels {
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

pub fn unit_seed(base: u64, video_id: &str, expression_id: &str) -> u64 {
    derive_seed(base, &[video_id, expression_id])
}

pub(crate) fn frame_rng(seed: u64, stream: &str, frame_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stream, &frame_index.to_string()]))
}

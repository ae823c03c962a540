//! Key-frame selection.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SamplerError {
    #[error("video length must be at least 1")]
    NoFrames,
    #[error("number of key frames must be at least 1")]
    NoKeyframes,
    #[error("unknown sampling strategy `{0}` (expected `uniform` or `first_k`)")]
    UnknownStrategy(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Evenly spaced over the whole video, both endpoints included.
    Uniform,
    /// The first `k` frames.
    FirstK,
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplingStrategy::Uniform => "uniform",
            SamplingStrategy::FirstK => "first_k",
        })
    }
}

impl FromStr for SamplingStrategy {
    type Err = SamplerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(SamplingStrategy::Uniform),
            "first_k" | "first-k" => Ok(SamplingStrategy::FirstK),
            other => Err(SamplerError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub strategy: SamplingStrategy,
    pub n_frames: usize,
    pub n_keyframes: usize,
    /// Strictly increasing 0-based frame indices, `min(n_keyframes, n_frames)` of them.
    pub indices: Vec<usize>,
}

impl SamplingPlan {
    pub fn new(strategy: SamplingStrategy, n_frames: usize, n_keyframes: usize) -> Result<Self, SamplerError> {
        match strategy {
            SamplingStrategy::Uniform => uniform_indices(n_frames, n_keyframes),
            SamplingStrategy::FirstK => first_k_indices(n_frames, n_keyframes),
        }
    }

    pub fn contains(&self, index: usize) -> bool {
        self.indices.binary_search(&index).is_ok()
    }

    /// Largest distance between consecutive selected indices (0 for a single index).
    pub fn max_gap(&self) -> usize {
        self.indices.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    /// Frames after the last selected index.
    pub fn tail_gap(&self) -> usize {
        self.n_frames - 1 - self.indices.last().copied().unwrap_or(0)
    }
}

fn check(n_frames: usize, n_keyframes: usize) -> Result<(), SamplerError> {
    if n_frames == 0 {
        return Err(SamplerError::NoFrames);
    }
    if n_keyframes == 0 {
        return Err(SamplerError::NoKeyframes);
    }
    Ok(())
}

/// `round(i * (N - 1) / (M - 1))` for `i` in `0..M`, rounding halves up, in
/// exact integer arithmetic. Returns every frame when `M >= N`.
pub fn uniform_indices(n_frames: usize, n_keyframes: usize) -> Result<SamplingPlan, SamplerError> {
    check(n_frames, n_keyframes)?;
    let indices = if n_keyframes >= n_frames {
        (0..n_frames).collect()
    } else if n_keyframes == 1 {
        vec![0]
    } else {
        let span = (n_frames - 1) as u128;
        let steps = (n_keyframes - 1) as u128;
        let mut idx: Vec<usize> = (0..n_keyframes as u128)
            .map(|i| ((2 * i * span + steps) / (2 * steps)) as usize)
            .collect();
        idx.dedup();
        idx
    };
    Ok(SamplingPlan {
        strategy: SamplingStrategy::Uniform,
        n_frames,
        n_keyframes,
        indices,
    })
}

pub fn first_k_indices(n_frames: usize, k: usize) -> Result<SamplingPlan, SamplerError> {
    check(n_frames, k)?;
    Ok(SamplingPlan {
        strategy: SamplingStrategy::FirstK,
        n_frames,
        n_keyframes: k,
        indices: (0..k.min(n_frames)).collect(),
    })
}

//! Pixel-level majority voting across expert prediction sets.
//!
//! A pixel is foreground iff strictly more than half of the `K` inputs mark
//! it (`2 * votes > K`). Even-`K` ties resolve to background.

use std::collections::BTreeSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{SequenceKey, SequenceMap};
use crate::mask::{check_same_shape, BinaryMask, MaskError, MaskSequence};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("fusion needs at least one prediction set")]
    NoSets,
    #[error("prediction sets cover different sequences; only in some sets: {}", join_keys(.symmetric_difference))]
    KeyMismatch { symmetric_difference: Vec<SequenceKey> },
    #[error("{key}: prediction sets disagree on frame names")]
    FrameMismatch { key: SequenceKey },
    #[error("{key} frame `{frame}`: {source}")]
    Frame {
        key: SequenceKey,
        frame: String,
        source: MaskError,
    },
}

fn join_keys(keys: &[SequenceKey]) -> String {
    keys.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(", ")
}

/// One expert's masks for a whole split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PredictionSet {
    pub model_name: String,
    pub sequences: SequenceMap,
}

/// Adds one word of votes into bit-sliced counters (`planes[j]` holds bit `j`
/// of every pixel's count).
fn add_votes(planes: &mut [u64], word: u64) {
    let mut carry = word;
    for plane in planes.iter_mut() {
        if carry == 0 {
            break;
        }
        let next = *plane & carry;
        *plane ^= carry;
        carry = next;
    }
}

/// Per-bit `count >= threshold` over bit-sliced counters.
fn at_least(planes: &[u64], threshold: usize) -> u64 {
    let mut greater = 0u64;
    let mut equal = !0u64;
    for (j, &plane) in planes.iter().enumerate().rev() {
        if (threshold >> j) & 1 == 1 {
            equal &= plane;
        } else {
            greater |= equal & plane;
            equal &= !plane;
        }
    }
    greater | equal
}

/// Strict-majority vote over `masks`.
pub fn fuse_frame(masks: &[BinaryMask]) -> Result<BinaryMask, MaskError> {
    let first = masks.first().ok_or(MaskError::EmptyInput)?;
    let shape = first.shape();
    for m in masks {
        check_same_shape(shape, m.shape())?;
    }
    if masks.len() == 1 {
        return Ok(first.clone());
    }
    let k = masks.len();
    let threshold = k / 2 + 1;
    let n_planes = (usize::BITS - k.leading_zeros()) as usize;
    let mut planes = vec![0u64; n_planes];
    let words = (0..first.words().len())
        .map(|wi| {
            planes.iter_mut().for_each(|p| *p = 0);
            for m in masks {
                add_votes(&mut planes, m.words()[wi]);
            }
            at_least(&planes, threshold)
        })
        .collect();
    Ok(BinaryMask::from_words(shape, words))
}

/// Frame-by-frame [`fuse_frame`] over every sequence. All sets must cover the
/// same keys with the same frame names.
pub fn fuse_sets(sets: &[PredictionSet]) -> Result<PredictionSet, FusionError> {
    let first = sets.first().ok_or(FusionError::NoSets)?;

    let key_sets: Vec<BTreeSet<&SequenceKey>> = sets.iter().map(|s| s.sequences.keys().collect()).collect();
    let all: BTreeSet<&SequenceKey> = key_sets.iter().flatten().copied().collect();
    let common: BTreeSet<&SequenceKey> = all
        .iter()
        .copied()
        .filter(|k| key_sets.iter().all(|ks| ks.contains(k)))
        .collect();
    if common.len() != all.len() {
        return Err(FusionError::KeyMismatch {
            symmetric_difference: all.difference(&common).map(|k| (*k).clone()).collect(),
        });
    }

    let keys: Vec<&SequenceKey> = first.sequences.keys().collect();
    let fused = keys
        .par_iter()
        .map(|key| {
            let seqs: Vec<&MaskSequence> = sets.iter().map(|s| &s.sequences[*key]).collect();
            let reference = seqs[0];
            if seqs
                .iter()
                .any(|s| s.len() != reference.len() || !s.frame_names().eq(reference.frame_names()))
            {
                return Err(FusionError::FrameMismatch { key: (*key).clone() });
            }
            let frames = reference
                .frame_names()
                .enumerate()
                .map(|(t, name)| {
                    let stack: Vec<BinaryMask> = seqs.iter().map(|s| s.mask(t).clone()).collect();
                    fuse_frame(&stack)
                        .map(|m| (name.to_string(), m))
                        .map_err(|source| FusionError::Frame {
                            key: (*key).clone(),
                            frame: name.to_string(),
                            source,
                        })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(((*key).clone(), MaskSequence::new(frames)?))
        })
        .collect::<Result<SequenceMap, FusionError>>()?;

    let names: Vec<&str> = sets.iter().map(|s| s.model_name.as_str()).collect();
    Ok(PredictionSet {
        model_name: format!("fused({})", names.join("+")),
        sequences: fused,
    })
}

//! Reference segmenters and propagators.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::{BackendError, FrameRef, MemoryState, Propagator, Segmenter};
use crate::dataset::{load_frames, MaskSource};
use crate::mask::{BinaryMask, MaskSequence};
use crate::seed::frame_rng;

fn flip_pixels(mask: &BinaryMask, rate: f64, seed: u64, stream: &str, frame: usize) -> BinaryMask {
    if rate <= 0.0 {
        return mask.clone();
    }
    let mut rng = frame_rng(seed, stream, frame);
    let noise = BinaryMask::from_fn(mask.height(), mask.width(), |_, _| rng.random_bool(rate))
        .expect("shape comes from an existing mask");
    mask.xor(&noise).expect("same shape")
}

/// Ground truth with each pixel flipped independently with probability `flip_rate`.
///
/// The flip pattern of a frame depends only on `(seed, frame index)`.
#[derive(Clone, Debug)]
pub struct GtNoiseSegmenter {
    gt: MaskSequence,
    flip_rate: f64,
    seed: u64,
}

pub fn make_gt_noise_segmenter(gt: MaskSequence, flip_rate: f64, seed: u64) -> Result<GtNoiseSegmenter, BackendError> {
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(BackendError::Invalid(format!("flip rate {flip_rate} outside [0, 1]")));
    }
    Ok(GtNoiseSegmenter { gt, flip_rate, seed })
}

fn gt_frame<'a>(gt: &'a MaskSequence, frame: &FrameRef) -> Result<&'a BinaryMask, BackendError> {
    if frame.index < gt.len() && gt.frames()[frame.index].0 == frame.name {
        Ok(gt.mask(frame.index))
    } else {
        Err(BackendError::UnknownFrame {
            index: frame.index,
            name: frame.name.clone(),
        })
    }
}

impl Segmenter for GtNoiseSegmenter {
    fn segment(&self, key_frames: &[FrameRef], _expression: &str) -> Result<Vec<BinaryMask>, BackendError> {
        key_frames
            .iter()
            .map(|f| {
                let gt = gt_frame(&self.gt, f)?;
                Ok(flip_pixels(gt, self.flip_rate, self.seed, "segment", f.index))
            })
            .collect()
    }
}

/// Reads stored masks from a prediction tree.
#[derive(Clone, Debug)]
pub struct PrecomputedSegmenter {
    root: PathBuf,
    video_id: String,
    expression_id: String,
}

pub fn make_precomputed_segmenter(root: impl AsRef<Path>, video_id: &str, expression_id: &str) -> PrecomputedSegmenter {
    PrecomputedSegmenter {
        root: root.as_ref().to_path_buf(),
        video_id: video_id.to_string(),
        expression_id: expression_id.to_string(),
    }
}

impl Segmenter for PrecomputedSegmenter {
    fn segment(&self, key_frames: &[FrameRef], _expression: &str) -> Result<Vec<BinaryMask>, BackendError> {
        let names: Vec<String> = key_frames.iter().map(|f| f.name.clone()).collect();
        let seq = load_frames(
            &self.root,
            &self.video_id,
            &self.expression_id,
            &names,
            MaskSource::Prediction,
        )?;
        Ok(seq.masks().cloned().collect())
    }
}

/// Copies the temporally nearest key-frame mask (earlier frame on ties).
#[derive(Clone, Debug)]
pub struct NearestKeyPropagator {
    pub window: usize,
}

impl Propagator for NearestKeyPropagator {
    fn init(&self, key_masks: &BTreeMap<usize, BinaryMask>) -> Result<MemoryState, BackendError> {
        if key_masks.is_empty() {
            return Err(BackendError::Invalid("no key frames to anchor memory".into()));
        }
        Ok(MemoryState::new(key_masks.clone(), self.window))
    }

    fn step(&self, mut memory: MemoryState, frame: &FrameRef) -> Result<(BinaryMask, MemoryState), BackendError> {
        let (_, mask) = memory
            .nearest_anchor(frame.index)
            .ok_or_else(|| BackendError::Invalid("memory has no anchors".into()))?;
        let mask = mask.clone();
        memory.remember(frame.index, mask.clone());
        Ok((mask, memory))
    }
}

/// Ground truth corrupted with flip probability
/// `min(max_rate, base_rate + growth * d)`, where `d` is the distance in
/// frames from the last key frame passed.
#[derive(Clone, Debug)]
pub struct DecayNoisePropagator {
    pub gt: MaskSequence,
    pub base_rate: f64,
    pub growth: f64,
    pub max_rate: f64,
    pub window: usize,
    pub seed: u64,
}

impl DecayNoisePropagator {
    pub fn flip_rate(&self, distance: usize) -> f64 {
        (self.base_rate + self.growth * distance as f64).clamp(0.0, self.max_rate.min(1.0))
    }
}

impl Propagator for DecayNoisePropagator {
    fn init(&self, key_masks: &BTreeMap<usize, BinaryMask>) -> Result<MemoryState, BackendError> {
        Ok(MemoryState::new(key_masks.clone(), self.window))
    }

    fn step(&self, mut memory: MemoryState, frame: &FrameRef) -> Result<(BinaryMask, MemoryState), BackendError> {
        let distance = match memory.last_anchor {
            Some(a) => frame.index - a,
            None => frame.index + 1,
        };
        let gt = gt_frame(&self.gt, frame)?;
        let mask = flip_pixels(gt, self.flip_rate(distance), self.seed, "propagate", frame.index);
        memory.remember(frame.index, mask.clone());
        Ok((mask, memory))
    }
}

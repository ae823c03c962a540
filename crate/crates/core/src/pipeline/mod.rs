//! Key-frame segmentation followed by memory propagation.
//!
//! A run samples key frames, asks a [`Segmenter`] for their masks, seeds a
//! [`MemoryState`] with them, then walks every frame in ascending temporal
//! order. Key frames emit the segmenter's mask verbatim and re-anchor memory;
//! every other frame is produced by [`Propagator::step`].

mod backends;
mod spec;

use std::collections::{BTreeMap, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, DatasetIndex, ExpressionRecord, SequenceKey, SequenceMap, VideoRecord};
use crate::mask::{BinaryMask, MaskError, MaskSequence, Shape};
use crate::sampler::{SamplerError, SamplingPlan, SamplingStrategy};
use crate::seed::unit_seed;

pub use backends::{
    make_gt_noise_segmenter, make_precomputed_segmenter, DecayNoisePropagator, GtNoiseSegmenter, NearestKeyPropagator,
    PrecomputedSegmenter,
};
pub use spec::{PropagatorSpec, SegmenterSpec, SpecError, DEFAULT_WINDOW};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("no mask for frame {index} (`{name}`)")]
    UnknownFrame { index: usize, name: String },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("segmenter failed on key frames {frames:?}: {source}")]
    Segmenter { frames: Vec<usize>, source: BackendError },
    #[error("segmenter returned {got} masks for {expected} key frames")]
    SegmenterCount { expected: usize, got: usize },
    #[error("frame {frame}: mask is {found}, expected {expected}")]
    FrameShape {
        frame: usize,
        expected: Shape,
        found: Shape,
    },
    #[error("propagator failed at frame {frame}: {source}")]
    Propagator { frame: usize, source: BackendError },
    #[error("{key}: {source}")]
    Unit {
        key: SequenceKey,
        source: Box<PipelineError>,
    },
    #[error("{key}: backend needs ground truth but none was loaded")]
    MissingGroundTruth { key: SequenceKey },
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// A frame handed to a backend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameRef {
    /// 0-based position in the video.
    pub index: usize,
    pub name: String,
}

/// Language-conditioned key-frame segmentation.
pub trait Segmenter: Send + Sync {
    /// One mask per key frame, in the order given.
    fn segment(&self, key_frames: &[FrameRef], expression: &str) -> Result<Vec<BinaryMask>, BackendError>;
}

/// Memory carried between frames.
///
/// The reference propagators keep every key-frame mask as an anchor plus a
/// bounded window of the most recently emitted masks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryState {
    pub anchors: BTreeMap<usize, BinaryMask>,
    /// Most recent key frame passed in temporal order.
    pub last_anchor: Option<usize>,
    pub recent: VecDeque<(usize, BinaryMask)>,
    pub window: usize,
}

impl MemoryState {
    pub fn new(anchors: BTreeMap<usize, BinaryMask>, window: usize) -> Self {
        Self {
            anchors,
            last_anchor: None,
            recent: VecDeque::new(),
            window,
        }
    }

    pub fn remember(&mut self, index: usize, mask: BinaryMask) {
        if self.window == 0 {
            return;
        }
        if self.recent.len() == self.window {
            self.recent.pop_front();
        }
        self.recent.push_back((index, mask));
    }

    /// Anchor with the smallest temporal distance to `index`; ties go to the earlier frame.
    pub fn nearest_anchor(&self, index: usize) -> Option<(usize, &BinaryMask)> {
        self.anchors
            .iter()
            .min_by_key(|(&k, _)| (k.abs_diff(index), k))
            .map(|(&k, m)| (k, m))
    }
}

/// Fills non-key frames from memory.
pub trait Propagator: Send + Sync {
    fn init(&self, key_masks: &BTreeMap<usize, BinaryMask>) -> Result<MemoryState, BackendError>;

    /// Called when the temporal walk reaches a key frame.
    fn observe_key(
        &self,
        mut memory: MemoryState,
        frame: &FrameRef,
        mask: &BinaryMask,
    ) -> Result<MemoryState, BackendError> {
        memory.last_anchor = Some(frame.index);
        memory.remember(frame.index, mask.clone());
        Ok(memory)
    }

    /// Mask for a non-key frame. Must be deterministic in `(memory, frame)`.
    fn step(&self, memory: MemoryState, frame: &FrameRef) -> Result<(BinaryMask, MemoryState), BackendError>;
}

/// Sampling and backend selection for one expert run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n_keyframes: usize,
    pub strategy: SamplingStrategy,
    pub segmenter: SegmenterSpec,
    pub propagator: PropagatorSpec,
    /// Used by backends whose spec carries no seed of its own.
    pub seed: u64,
}

impl PipelineConfig {
    pub fn plan(&self, n_frames: usize) -> Result<SamplingPlan, SamplerError> {
        SamplingPlan::new(self.strategy, n_frames, self.n_keyframes)
    }
}

/// Produces one mask per frame of `video` for `expression`.
pub fn run_pipeline(
    video: &VideoRecord,
    expression: &ExpressionRecord,
    segmenter: &dyn Segmenter,
    propagator: &dyn Propagator,
    config: &PipelineConfig,
) -> Result<MaskSequence, PipelineError> {
    let plan = config.plan(video.n_frames())?;
    let frame_ref = |index: usize| FrameRef {
        index,
        name: video.frame_names[index].clone(),
    };
    let key_refs: Vec<FrameRef> = plan.indices.iter().map(|&i| frame_ref(i)).collect();

    let key_masks = segmenter
        .segment(&key_refs, &expression.text)
        .map_err(|source| PipelineError::Segmenter {
            frames: plan.indices.clone(),
            source,
        })?;
    if key_masks.len() != key_refs.len() {
        return Err(PipelineError::SegmenterCount {
            expected: key_refs.len(),
            got: key_masks.len(),
        });
    }
    let shape = key_masks[0].shape();
    for (r, m) in key_refs.iter().zip(&key_masks) {
        if m.shape() != shape {
            return Err(PipelineError::FrameShape {
                frame: r.index,
                expected: shape,
                found: m.shape(),
            });
        }
    }

    let keyed: BTreeMap<usize, BinaryMask> = plan.indices.iter().copied().zip(key_masks).collect();
    let mut memory = propagator
        .init(&keyed)
        .map_err(|source| PipelineError::Propagator { frame: 0, source })?;

    let mut out = Vec::with_capacity(video.n_frames());
    for index in 0..video.n_frames() {
        let frame = frame_ref(index);
        let mask = match keyed.get(&index) {
            Some(mask) => {
                memory = propagator
                    .observe_key(memory, &frame, mask)
                    .map_err(|source| PipelineError::Propagator { frame: index, source })?;
                mask.clone()
            }
            None => {
                let (mask, next) = propagator
                    .step(memory, &frame)
                    .map_err(|source| PipelineError::Propagator { frame: index, source })?;
                if mask.shape() != shape {
                    return Err(PipelineError::FrameShape {
                        frame: index,
                        expected: shape,
                        found: mask.shape(),
                    });
                }
                memory = next;
                mask
            }
        };
        out.push((frame.name, mask));
    }
    Ok(MaskSequence::new(out)?)
}

/// Runs the pipeline for every (video, expression) in `index`, building
/// fresh backends per unit from `config`. Units run in parallel; each unit's
/// randomness depends only on its seed and ids.
pub fn simulate(
    index: &DatasetIndex,
    ground_truth: Option<&SequenceMap>,
    config: &PipelineConfig,
) -> Result<SequenceMap, PipelineError> {
    let units: Vec<_> = index.units().collect();
    units
        .par_iter()
        .map(|(video, expression)| {
            let key = SequenceKey::new(&video.video_id, &expression.expression_id);
            let seq = simulate_unit(video, expression, &key, ground_truth, config).map_err(|e| match e {
                e @ PipelineError::MissingGroundTruth { .. } => e,
                other => PipelineError::Unit {
                    key: key.clone(),
                    source: Box::new(other),
                },
            })?;
            Ok((key, seq))
        })
        .collect()
}

fn simulate_unit(
    video: &VideoRecord,
    expression: &ExpressionRecord,
    key: &SequenceKey,
    ground_truth: Option<&SequenceMap>,
    config: &PipelineConfig,
) -> Result<MaskSequence, PipelineError> {
    let gt = || {
        ground_truth
            .and_then(|m| m.get(key))
            .ok_or_else(|| PipelineError::MissingGroundTruth { key: key.clone() })
    };
    let seed_for = |own: Option<u64>| unit_seed(own.unwrap_or(config.seed), &key.video_id, &key.expression_id);

    let segmenter: Box<dyn Segmenter> = match &config.segmenter {
        SegmenterSpec::GroundTruth => Box::new(make_gt_noise_segmenter(gt()?.clone(), 0.0, 0)?),
        SegmenterSpec::GtNoise { flip_rate, seed } => {
            Box::new(make_gt_noise_segmenter(gt()?.clone(), *flip_rate, seed_for(*seed))?)
        }
        SegmenterSpec::Precomputed { root } => {
            Box::new(make_precomputed_segmenter(root, &key.video_id, &key.expression_id))
        }
    };
    let propagator: Box<dyn Propagator> = match &config.propagator {
        PropagatorSpec::NearestKey { window } => Box::new(NearestKeyPropagator { window: *window }),
        PropagatorSpec::DecayNoise {
            base_rate,
            growth,
            max_rate,
            window,
            seed,
        } => Box::new(DecayNoisePropagator {
            gt: gt()?.clone(),
            base_rate: *base_rate,
            growth: *growth,
            max_rate: *max_rate,
            window: *window,
            seed: seed_for(*seed),
        }),
    };
    run_pipeline(video, expression, segmenter.as_ref(), propagator.as_ref(), config)
}

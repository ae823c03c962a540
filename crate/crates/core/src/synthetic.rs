//! Deterministic synthetic videos and ground-truth trees for tests and demos.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    index_from_str, write_index, write_mask_tree, DatasetError, DatasetIndex, ExpressionRecord, SequenceKey,
    SequenceMap, VideoRecord,
};
use crate::mask::{BinaryMask, MaskSequence, Shape};
use crate::seed::derive_seed;

/// Two videos, three expressions, eleven frames.
pub const FIXTURE_METADATA: &str = include_str!("../fixtures/meta_expressions.json");

pub const DEFAULT_SHAPE: Shape = Shape { height: 48, width: 64 };

/// Zero-padded five-digit names `00000`, `00001`, ...
pub fn frame_names(n_frames: usize) -> Vec<String> {
    (0..n_frames).map(|i| format!("{i:05}")).collect()
}

/// Axis-aligned box moving at constant velocity; the part outside the frame is clipped.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct MovingBox {
    pub top: f64,
    pub left: f64,
    pub height: f64,
    pub width: f64,
    pub dy: f64,
    pub dx: f64,
}

impl MovingBox {
    pub fn render(&self, shape: Shape, t: usize) -> BinaryMask {
        let top = self.top + self.dy * t as f64;
        let left = self.left + self.dx * t as f64;
        BinaryMask::from_fn(shape.height, shape.width, |y, x| {
            let (y, x) = (y as f64, x as f64);
            y >= top && y < top + self.height && x >= left && x < left + self.width
        })
        .expect("nonzero shape")
    }

    pub fn sequence(&self, shape: Shape, n_frames: usize) -> MaskSequence {
        let masks = (0..n_frames).map(|t| self.render(shape, t)).collect();
        MaskSequence::from_parts(&frame_names(n_frames), masks).expect("names are ascending")
    }
}

/// Object visible only in the final third of the video, drifting right by one pixel per frame.
pub fn late_object_sequence(shape: Shape, n_frames: usize) -> MaskSequence {
    let appear = n_frames - n_frames / 3;
    let object = MovingBox {
        top: shape.height as f64 * 0.3,
        left: shape.width as f64 * 0.1,
        height: shape.height as f64 * 0.4,
        width: shape.width as f64 * 0.3,
        dy: 0.0,
        dx: 0.5,
    };
    let empty = BinaryMask::empty(shape.height, shape.width).expect("nonzero shape");
    let masks = (0..n_frames)
        .map(|t| {
            if t >= appear {
                object.render(shape, t - appear)
            } else {
                empty.clone()
            }
        })
        .collect();
    MaskSequence::from_parts(&frame_names(n_frames), masks).expect("names are ascending")
}

/// Ground truth for one (video, expression): a box whose position, size and
/// velocity are drawn from a stream seeded by the ids.
pub fn scene_for(video_id: &str, expression_id: &str, frames: &[String], shape: Shape) -> MaskSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(0x5eed, &[video_id, expression_id]));
    let (h, w) = (shape.height as f64, shape.width as f64);
    let bh = rng.random_range(0.25..0.45) * h;
    let bw = rng.random_range(0.2..0.4) * w;
    let object = MovingBox {
        top: rng.random_range(0.05..0.4) * h,
        left: rng.random_range(0.05..0.4) * w,
        height: bh,
        width: bw,
        dy: rng.random_range(-0.6..0.6),
        dx: rng.random_range(-0.2..1.2),
    };
    let masks = (0..frames.len()).map(|t| object.render(shape, t)).collect();
    MaskSequence::from_parts(frames, masks).expect("index frames are ascending")
}

pub fn render_ground_truth(index: &DatasetIndex, shape: Shape) -> SequenceMap {
    index
        .units()
        .map(|(v, e)| {
            (
                SequenceKey::new(&v.video_id, &e.expression_id),
                scene_for(&v.video_id, &e.expression_id, &v.frame_names, shape),
            )
        })
        .collect()
}

pub fn fixture_index() -> DatasetIndex {
    index_from_str(FIXTURE_METADATA, "fixture").expect("fixture metadata is valid")
}

/// Single-video index for [`late_object_sequence`].
pub fn late_object_index(n_frames: usize) -> DatasetIndex {
    let video = VideoRecord {
        video_id: "late_object".into(),
        frame_names: frame_names(n_frames),
        expressions: vec![ExpressionRecord {
            expression_id: "0".into(),
            text: "the box that slides in near the end".into(),
            object_ids: vec![1],
        }],
    };
    DatasetIndex {
        split_name: "synthetic".into(),
        videos: [(video.video_id.clone(), video)].into_iter().collect(),
    }
}

pub fn late_object_ground_truth(shape: Shape, n_frames: usize) -> SequenceMap {
    [(
        SequenceKey::new("late_object", "0"),
        late_object_sequence(shape, n_frames),
    )]
    .into_iter()
    .collect()
}

/// Paths of a dataset written by [`write_dataset`].
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub metadata: PathBuf,
    pub ground_truth: PathBuf,
}

/// Writes `<root>/meta_expressions.json` and the ground-truth tree under `<root>/gt`.
pub fn write_dataset(
    root: impl AsRef<Path>,
    index: &DatasetIndex,
    gt: &SequenceMap,
) -> Result<DatasetPaths, DatasetError> {
    let root = root.as_ref();
    let paths = DatasetPaths {
        metadata: root.join("meta_expressions.json"),
        ground_truth: root.join("gt"),
    };
    write_index(index, &paths.metadata)?;
    write_mask_tree(&paths.ground_truth, gt)?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn late_object_only_in_final_third() {
        let seq = late_object_sequence(DEFAULT_SHAPE, 60);
        assert_eq!(seq.len(), 60);
        for (t, m) in seq.masks().enumerate() {
            assert_eq!(m.is_empty(), t < 40, "frame {t}");
        }
    }

    #[test]
    fn scenes_are_deterministic_and_visible() {
        let index = fixture_index();
        let a = render_ground_truth(&index, DEFAULT_SHAPE);
        let b = render_ground_truth(&index, DEFAULT_SHAPE);
        assert_eq!(a, b);
        for seq in a.values() {
            assert!(seq.masks().all(|m| m.area() > 50));
        }
    }

    #[test]
    fn frame_names_are_padded() {
        assert_eq!(frame_names(3), vec!["00000", "00001", "00002"]);
    }
}

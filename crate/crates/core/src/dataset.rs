//! Benchmark metadata and mask-tree I/O.
//!
//! Metadata follows the `meta_expressions.json` layout:
//!
//! ```json
//! {"videos": {"<video_id>": {"frames": ["00000", ...],
//!                            "expressions": {"<expression_id>": {"exp": "...", "obj_id": [1]}}}}}
//! ```
//!
//! Mask trees store one PNG per frame at `<root>/<video_id>/<expression_id>/<frame>.png`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::{Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::mask::{read_png, write_png, MaskError, MaskSequence, Shape};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("video `{video}`: {reason}")]
    InvalidVideo { video: String, reason: String },
    #[error("video `{video}` expression `{expression}`: {reason}")]
    InvalidExpression {
        video: String,
        expression: String,
        reason: String,
    },
    #[error("duplicate video id `{video}`")]
    DuplicateVideo { video: String },
    #[error("video `{video}`: duplicate expression id `{expression}`")]
    DuplicateExpression { video: String, expression: String },
    #[error("video `{video}` lists no frames")]
    NoFrames { video: String },
    #[error("video `{video}`: duplicate frame `{frame}`")]
    DuplicateFrame { video: String, frame: String },
    #[error("video `{video}`: frame names `{first}` and `{other}` differ in width; zero-pad them")]
    MixedWidthFrames {
        video: String,
        first: String,
        other: String,
    },
    #[error("video `{video}` expression `{expression}` has empty text")]
    EmptyExpression { video: String, expression: String },
    #[error("missing {source_kind} mask for video `{video}` expression `{expression}` frame `{frame}`: {}", path.display())]
    MissingFrame {
        source_kind: MaskSource,
        video: String,
        expression: String,
        frame: String,
        path: PathBuf,
    },
    #[error("{}: mask is {found}, video `{video}` is {expected}", path.display())]
    FrameShape {
        video: String,
        path: PathBuf,
        expected: Shape,
        found: Shape,
    },
    /// `source` already names the file.
    #[error("{source}")]
    Mask { path: PathBuf, source: MaskError },
    #[error("mask sequence for {key}: {source}")]
    Sequence { key: SequenceKey, source: MaskError },
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Identifies one (video, expression) evaluation unit.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SequenceKey {
    pub video_id: String,
    pub expression_id: String,
}

impl SequenceKey {
    pub fn new(video_id: impl Into<String>, expression_id: impl Into<String>) -> Self {
        Self {
            video_id: video_id.into(),
            expression_id: expression_id.into(),
        }
    }
}

impl fmt::Display for SequenceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.video_id, self.expression_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpressionRecord {
    pub expression_id: String,
    /// The referring expression.
    pub text: String,
    pub object_ids: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VideoRecord {
    pub video_id: String,
    /// Sorted ascending, unique, uniform width.
    pub frame_names: Vec<String>,
    /// Sorted by expression id.
    pub expressions: Vec<ExpressionRecord>,
}

impl VideoRecord {
    pub fn n_frames(&self) -> usize {
        self.frame_names.len()
    }

    pub fn expression(&self, expression_id: &str) -> Option<&ExpressionRecord> {
        self.expressions.iter().find(|e| e.expression_id == expression_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetIndex {
    pub split_name: String,
    pub videos: BTreeMap<String, VideoRecord>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub videos: usize,
    pub expressions: usize,
    pub frames: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum MaskSource {
    GroundTruth,
    Prediction,
}

impl fmt::Display for MaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskSource::GroundTruth => "ground-truth",
            MaskSource::Prediction => "prediction",
        })
    }
}

/// One mask sequence per (video, expression).
pub type SequenceMap = BTreeMap<SequenceKey, MaskSequence>;

impl DatasetIndex {
    /// Every (video, expression) pair, in `(video_id, expression_id)` order.
    pub fn units(&self) -> impl Iterator<Item = (&VideoRecord, &ExpressionRecord)> {
        self.videos
            .values()
            .flat_map(|v| v.expressions.iter().map(move |e| (v, e)))
    }

    pub fn keys(&self) -> Vec<SequenceKey> {
        self.units()
            .map(|(v, e)| SequenceKey::new(&v.video_id, &e.expression_id))
            .collect()
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            videos: self.videos.len(),
            expressions: self.videos.values().map(|v| v.expressions.len()).sum(),
            frames: self.videos.values().map(|v| v.frame_names.len()).sum(),
        }
    }
}

pub fn dataset_stats(index: &DatasetIndex) -> DatasetStats {
    index.stats()
}

// JSON object that keeps duplicate keys so they can be reported instead of
// silently overwritten.
struct KeyedEntries<T>(Vec<(String, T)>);

impl<'de, T: Deserialize<'de>> Deserialize<'de> for KeyedEntries<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct EntriesVisitor<T>(std::marker::PhantomData<T>);
        impl<'de, T: Deserialize<'de>> Visitor<'de> for EntriesVisitor<T> {
            type Value = KeyedEntries<T>;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, T>()? {
                    out.push((k, v));
                }
                Ok(KeyedEntries(out))
            }
        }
        d.deserialize_map(EntriesVisitor(std::marker::PhantomData))
    }
}

#[derive(Deserialize)]
struct RawMeta {
    videos: KeyedEntries<Box<RawValue>>,
}

#[derive(Deserialize)]
struct RawVideo {
    frames: Vec<String>,
    expressions: KeyedEntries<Box<RawValue>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawObjIds {
    One(i64),
    Many(Vec<i64>),
}

#[derive(Deserialize)]
struct RawExpression {
    exp: String,
    #[serde(default)]
    obj_id: Option<RawObjIds>,
}

fn build_index(raw: RawMeta, split_name: &str) -> Result<DatasetIndex, DatasetError> {
    let mut videos = BTreeMap::new();
    for (video_id, value) in raw.videos.0 {
        if videos.contains_key(&video_id) {
            return Err(DatasetError::DuplicateVideo { video: video_id });
        }
        let rv: RawVideo = serde_json::from_str(value.get()).map_err(|e| DatasetError::InvalidVideo {
            video: video_id.clone(),
            reason: e.to_string(),
        })?;
        let record = build_video(&video_id, rv)?;
        videos.insert(video_id, record);
    }
    Ok(DatasetIndex {
        split_name: split_name.to_string(),
        videos,
    })
}

fn build_video(video_id: &str, rv: RawVideo) -> Result<VideoRecord, DatasetError> {
    let mut frames = rv.frames;
    if frames.is_empty() {
        return Err(DatasetError::NoFrames {
            video: video_id.to_string(),
        });
    }
    let width = frames[0].chars().count();
    if let Some(other) = frames.iter().find(|f| f.chars().count() != width) {
        return Err(DatasetError::MixedWidthFrames {
            video: video_id.to_string(),
            first: frames[0].clone(),
            other: other.clone(),
        });
    }
    frames.sort();
    if let Some(pair) = frames.windows(2).find(|p| p[0] == p[1]) {
        return Err(DatasetError::DuplicateFrame {
            video: video_id.to_string(),
            frame: pair[0].clone(),
        });
    }

    let mut seen = BTreeSet::new();
    let mut expressions = Vec::new();
    for (expression_id, value) in rv.expressions.0 {
        if !seen.insert(expression_id.clone()) {
            return Err(DatasetError::DuplicateExpression {
                video: video_id.to_string(),
                expression: expression_id,
            });
        }
        let re: RawExpression = serde_json::from_str(value.get()).map_err(|e| DatasetError::InvalidExpression {
            video: video_id.to_string(),
            expression: expression_id.clone(),
            reason: e.to_string(),
        })?;
        if re.exp.trim().is_empty() {
            return Err(DatasetError::EmptyExpression {
                video: video_id.to_string(),
                expression: expression_id,
            });
        }
        let object_ids = match re.obj_id {
            None => Vec::new(),
            Some(RawObjIds::One(id)) => vec![id],
            Some(RawObjIds::Many(ids)) => ids,
        };
        expressions.push(ExpressionRecord {
            expression_id,
            text: re.exp,
            object_ids,
        });
    }
    expressions.sort_by(|a, b| a.expression_id.cmp(&b.expression_id));

    Ok(VideoRecord {
        video_id: video_id.to_string(),
        frame_names: frames,
        expressions,
    })
}

/// Parses metadata from a string.
pub fn index_from_str(json: &str, split_name: &str) -> Result<DatasetIndex, DatasetError> {
    let raw: RawMeta = serde_json::from_str(json).map_err(|source| DatasetError::Parse {
        path: PathBuf::from("<memory>"),
        source,
    })?;
    build_index(raw, split_name)
}

/// Loads and validates a metadata file. The split name is taken from the
/// parent directory (e.g. `valid_u/meta_expressions.json` → `valid_u`).
pub fn load_index(path: impl AsRef<Path>) -> Result<DatasetIndex, DatasetError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    let raw: RawMeta = serde_json::from_str(&text).map_err(|source| DatasetError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let split = path
        .parent()
        .and_then(|p| p.file_name())
        .and_then(|n| n.to_str())
        .unwrap_or("unknown");
    build_index(raw, split)
}

#[derive(Serialize)]
struct OutExpression<'a> {
    exp: &'a str,
    #[serde(skip_serializing_if = "<[i64]>::is_empty")]
    obj_id: &'a [i64],
}

#[derive(Serialize)]
struct OutVideo<'a> {
    frames: &'a [String],
    expressions: BTreeMap<&'a str, OutExpression<'a>>,
}

#[derive(Serialize)]
struct OutMeta<'a> {
    videos: BTreeMap<&'a str, OutVideo<'a>>,
}

pub fn index_to_json(index: &DatasetIndex) -> String {
    let meta = OutMeta {
        videos: index
            .videos
            .values()
            .map(|v| {
                let expressions = v
                    .expressions
                    .iter()
                    .map(|e| {
                        (
                            e.expression_id.as_str(),
                            OutExpression {
                                exp: &e.text,
                                obj_id: &e.object_ids,
                            },
                        )
                    })
                    .collect();
                (
                    v.video_id.as_str(),
                    OutVideo {
                        frames: &v.frame_names,
                        expressions,
                    },
                )
            })
            .collect(),
    };
    serde_json::to_string_pretty(&meta).expect("metadata serializes")
}

pub fn write_index(index: &DatasetIndex, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DatasetError::io(parent, e))?;
    }
    fs::write(path, index_to_json(index) + "\n").map_err(|e| DatasetError::io(path, e))
}

pub fn mask_path(root: &Path, video_id: &str, expression_id: &str, frame: &str) -> PathBuf {
    root.join(video_id).join(expression_id).join(format!("{frame}.png"))
}

/// Loads the masks for `frames` of one unit. Every file must exist and share one shape.
pub fn load_frames(
    root: &Path,
    video_id: &str,
    expression_id: &str,
    frames: &[String],
    source: MaskSource,
) -> Result<MaskSequence, DatasetError> {
    let mut out = Vec::with_capacity(frames.len());
    let mut shape: Option<Shape> = None;
    for frame in frames {
        let path = mask_path(root, video_id, expression_id, frame);
        if !path.is_file() {
            return Err(DatasetError::MissingFrame {
                source_kind: source,
                video: video_id.to_string(),
                expression: expression_id.to_string(),
                frame: frame.clone(),
                path,
            });
        }
        let mask = read_png(&path).map_err(|source| DatasetError::Mask {
            path: path.clone(),
            source,
        })?;
        match shape {
            None => shape = Some(mask.shape()),
            Some(expected) if expected != mask.shape() => {
                return Err(DatasetError::FrameShape {
                    video: video_id.to_string(),
                    path,
                    expected,
                    found: mask.shape(),
                })
            }
            Some(_) => {}
        }
        out.push((frame.clone(), mask));
    }
    MaskSequence::new(out).map_err(|source| DatasetError::Sequence {
        key: SequenceKey::new(video_id, expression_id),
        source,
    })
}

/// Loads a complete mask tree for `index`. Either every sequence loads or an
/// error is returned; partial maps are never produced.
pub fn load_mask_tree(
    root: impl AsRef<Path>,
    index: &DatasetIndex,
    source: MaskSource,
) -> Result<SequenceMap, DatasetError> {
    let root = root.as_ref();
    let units: Vec<_> = index.units().collect();
    let loaded: Vec<(SequenceKey, MaskSequence)> = units
        .par_iter()
        .map(|(v, e)| {
            let seq = load_frames(root, &v.video_id, &e.expression_id, &v.frame_names, source)?;
            Ok((SequenceKey::new(&v.video_id, &e.expression_id), seq))
        })
        .collect::<Result<_, DatasetError>>()?;

    // shapes must also agree across expressions of one video
    let mut video_shape: BTreeMap<&str, (Shape, &SequenceKey)> = BTreeMap::new();
    for (key, seq) in &loaded {
        match video_shape.get(key.video_id.as_str()) {
            None => {
                video_shape.insert(&key.video_id, (seq.shape(), key));
            }
            Some((expected, _)) if *expected != seq.shape() => {
                return Err(DatasetError::FrameShape {
                    video: key.video_id.clone(),
                    path: mask_path(root, &key.video_id, &key.expression_id, seq.frames()[0].0.as_str()),
                    expected: *expected,
                    found: seq.shape(),
                });
            }
            Some(_) => {}
        }
    }
    Ok(loaded.into_iter().collect())
}

/// Writes every sequence as `<root>/<video>/<expression>/<frame>.png`.
pub fn write_mask_tree(root: impl AsRef<Path>, sequences: &SequenceMap) -> Result<(), DatasetError> {
    let root = root.as_ref();
    sequences
        .par_iter()
        .try_for_each(|(key, seq)| -> Result<(), DatasetError> {
            let dir = root.join(&key.video_id).join(&key.expression_id);
            fs::create_dir_all(&dir).map_err(|e| DatasetError::io(&dir, e))?;
            for (frame, mask) in seq.frames() {
                let path = mask_path(root, &key.video_id, &key.expression_id, frame);
                write_png(&path, mask).map_err(|source| DatasetError::Mask {
                    path: path.clone(),
                    source,
                })?;
            }
            Ok(())
        })
}

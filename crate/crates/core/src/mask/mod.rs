//! Dense binary masks, mask sequences, and the set-algebra kernels built on them.
//!
//! A [`BinaryMask`] is a row-major bitset packed into `u64` words. Bits past
//! `height * width` in the final word are always zero, so whole-word popcounts
//! give exact pixel counts without a tail fixup.

mod image_io;
mod morphology;
mod rle;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use image_io::{decode_png, encode_png, read_png, write_png};
pub use rle::RleMask;

const WORD_BITS: usize = 64;

/// Height and width of a raster, in pixels.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Length of the image diagonal.
    pub fn diagonal(&self) -> f64 {
        ((self.height * self.height + self.width * self.width) as f64).sqrt()
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

#[derive(Debug, Error)]
pub enum MaskError {
    #[error("mask dimensions must be at least 1x1, got {0}")]
    ZeroDimension(Shape),
    #[error("a {shape} mask needs {expected} pixels, got {found}")]
    LengthMismatch {
        shape: Shape,
        expected: usize,
        found: usize,
    },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: Shape, right: Shape },
    #[error("operation needs at least one mask")]
    EmptyInput,
    #[error("RLE runs sum to {found}, a {shape} mask has {expected} pixels")]
    RunSumMismatch { shape: Shape, expected: u64, found: u64 },
    #[error("RLE run {index} has zero length")]
    ZeroRun { index: usize },
    #[error("malformed RLE text: {0}")]
    RleSyntax(String),
    #[error("mask sequence has no frames")]
    EmptySequence,
    #[error("frame names must be unique and ascending: `{previous}` is followed by `{next}`")]
    FrameOrder { previous: String, next: String },
    #[error("frame `{frame}` is {found} but the sequence is {expected}")]
    SequenceShape {
        frame: String,
        expected: Shape,
        found: Shape,
    },
    #[error("translation by ({dy}, {dx}) moves foreground out of the frame")]
    OutOfFrame { dy: isize, dx: isize },
    #[error("png decode: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error("png encode: {0}")]
    PngEncode(#[from] png::EncodingError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {inner}", path.display())]
    AtPath { path: PathBuf, inner: Box<MaskError> },
}

impl MaskError {
    pub(crate) fn at_path(self, path: impl Into<PathBuf>) -> Self {
        MaskError::AtPath {
            path: path.into(),
            inner: Box::new(self),
        }
    }
}

pub(crate) fn check_same_shape(a: Shape, b: Shape) -> Result<(), MaskError> {
    if a == b {
        Ok(())
    } else {
        Err(MaskError::DimensionMismatch { left: a, right: b })
    }
}

/// Single-frame foreground/background raster.
///
/// Every operation returns a new mask; nothing mutates `self`.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "RleMask", try_from = "RleMask")]
pub struct BinaryMask {
    shape: Shape,
    words: Vec<u64>,
}

fn word_count(pixels: usize) -> usize {
    pixels.div_ceil(WORD_BITS)
}

impl BinaryMask {
    /// All-background mask.
    pub fn empty(height: usize, width: usize) -> Result<Self, MaskError> {
        let shape = Shape::new(height, width);
        if height == 0 || width == 0 {
            return Err(MaskError::ZeroDimension(shape));
        }
        Ok(Self {
            shape,
            words: vec![0; word_count(shape.pixels())],
        })
    }

    /// All-foreground mask.
    pub fn full(height: usize, width: usize) -> Result<Self, MaskError> {
        Ok(Self::empty(height, width)?.not())
    }

    /// Builds a mask by evaluating `f(row, col)` for every pixel.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self, MaskError> {
        let mut mask = Self::empty(height, width)?;
        for y in 0..height {
            for x in 0..width {
                if f(y, x) {
                    mask.set_index(y * width + x);
                }
            }
        }
        Ok(mask)
    }

    /// Row-major bytes; any nonzero byte is foreground.
    pub fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<Self, MaskError> {
        let mut mask = Self::empty(height, width)?;
        let expected = mask.shape.pixels();
        if bytes.len() != expected {
            return Err(MaskError::LengthMismatch {
                shape: mask.shape,
                expected,
                found: bytes.len(),
            });
        }
        for (i, &b) in bytes.iter().enumerate() {
            if b != 0 {
                mask.set_index(i);
            }
        }
        Ok(mask)
    }

    pub fn from_bools(height: usize, width: usize, bits: &[bool]) -> Result<Self, MaskError> {
        let bytes: Vec<u8> = bits.iter().map(|&b| u8::from(b)).collect();
        Self::from_bytes(height, width, &bytes)
    }

    pub(crate) fn from_words(shape: Shape, mut words: Vec<u64>) -> Self {
        debug_assert_eq!(words.len(), word_count(shape.pixels()));
        let tail = shape.pixels() % WORD_BITS;
        if tail != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        Self { shape, words }
    }

    pub(crate) fn words(&self) -> &[u64] {
        &self.words
    }

    fn set_index(&mut self, i: usize) {
        self.words[i / WORD_BITS] |= 1u64 << (i % WORD_BITS);
    }

    fn clear_index(&mut self, i: usize) {
        self.words[i / WORD_BITS] &= !(1u64 << (i % WORD_BITS));
    }

    fn get_index(&self, i: usize) -> bool {
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    /// Foreground indicator at `(row, col)`. Panics when out of range.
    pub fn get(&self, y: usize, x: usize) -> bool {
        assert!(
            y < self.shape.height && x < self.shape.width,
            "pixel ({y}, {x}) outside {} mask",
            self.shape
        );
        self.get_index(y * self.shape.width + x)
    }

    /// Copy of `self` with one pixel set to `value`.
    pub fn with_pixel(&self, y: usize, x: usize, value: bool) -> Self {
        assert!(
            y < self.shape.height && x < self.shape.width,
            "pixel ({y}, {x}) outside {} mask",
            self.shape
        );
        let mut out = self.clone();
        let i = y * self.shape.width + x;
        if value {
            out.set_index(i);
        } else {
            out.clear_index(i);
        }
        out
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// True when the mask has no foreground pixel.
    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Row-major `(row, col)` coordinates of every foreground pixel.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let width = self.shape.width;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut bits = word;
            std::iter::from_fn(move || {
                if bits == 0 {
                    return None;
                }
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                let i = wi * WORD_BITS + b;
                Some((i / width, i % width))
            })
        })
    }

    /// Row-major 0/1 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        (0..self.shape.pixels()).map(|i| u8::from(self.get_index(i))).collect()
    }

    fn zip_words(&self, other: &Self, op: impl Fn(u64, u64) -> u64) -> Result<Self, MaskError> {
        check_same_shape(self.shape, other.shape)?;
        let words = self.words.iter().zip(&other.words).map(|(&a, &b)| op(a, b)).collect();
        Ok(Self::from_words(self.shape, words))
    }

    pub fn and(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_words(other, |a, b| a | b)
    }

    pub fn xor(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_words(other, |a, b| a ^ b)
    }

    /// `self` with every pixel of `other` removed.
    pub fn and_not(&self, other: &Self) -> Result<Self, MaskError> {
        self.zip_words(other, |a, b| a & !b)
    }

    /// Complement.
    pub fn not(&self) -> Self {
        Self::from_words(self.shape, self.words.iter().map(|w| !w).collect())
    }

    fn pair_count(&self, other: &Self, op: impl Fn(u64, u64) -> u64) -> Result<usize, MaskError> {
        check_same_shape(self.shape, other.shape)?;
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(&a, &b)| op(a, b).count_ones() as usize)
            .sum())
    }

    pub fn intersection_area(&self, other: &Self) -> Result<usize, MaskError> {
        self.pair_count(other, |a, b| a & b)
    }

    pub fn union_area(&self, other: &Self) -> Result<usize, MaskError> {
        self.pair_count(other, |a, b| a | b)
    }

    /// Number of pixels where the two masks disagree.
    pub fn hamming_distance(&self, other: &Self) -> Result<usize, MaskError> {
        self.pair_count(other, |a, b| a ^ b)
    }

    /// Shifts the mask by `(dy, dx)` pixels. Fails instead of clipping when
    /// any foreground pixel would leave the frame.
    pub fn translated(&self, dy: isize, dx: isize) -> Result<Self, MaskError> {
        let mut out = Self::empty(self.shape.height, self.shape.width)?;
        for (y, x) in self.ones() {
            let ny = y as isize + dy;
            let nx = x as isize + dx;
            if ny < 0 || nx < 0 || ny >= self.shape.height as isize || nx >= self.shape.width as isize {
                return Err(MaskError::OutOfFrame { dy, dx });
            }
            out.set_index(ny as usize * self.shape.width + nx as usize);
        }
        Ok(out)
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BinaryMask")
            .field("shape", &format_args!("{}", self.shape))
            .field("area", &self.area())
            .finish()
    }
}

/// Intersection over union. Two empty masks score 1.0; empty against
/// nonempty scores 0.0.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    let union = a.union_area(b)?;
    if union == 0 {
        return Ok(1.0);
    }
    let inter = a.intersection_area(b)?;
    Ok(inter as f64 / union as f64)
}

/// Per-pixel foreground vote counts over a stack of masks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoteCounts {
    shape: Shape,
    counts: Vec<u32>,
}

impl VoteCounts {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn get(&self, y: usize, x: usize) -> u32 {
        assert!(y < self.shape.height && x < self.shape.width);
        self.counts[y * self.shape.width + x]
    }

    /// Row-major counts.
    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }
}

pub fn vote_count_stack(masks: &[BinaryMask]) -> Result<VoteCounts, MaskError> {
    let first = masks.first().ok_or(MaskError::EmptyInput)?;
    let shape = first.shape;
    let mut counts = vec![0u32; shape.pixels()];
    for mask in masks {
        check_same_shape(shape, mask.shape)?;
        for (wi, &word) in mask.words.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                counts[wi * WORD_BITS + b] += 1;
            }
        }
    }
    Ok(VoteCounts { shape, counts })
}

/// Per-frame masks for one (video, expression) pair, ordered by frame name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(String, BinaryMask)>", into = "Vec<(String, BinaryMask)>")]
pub struct MaskSequence {
    frames: Vec<(String, BinaryMask)>,
}

impl MaskSequence {
    /// Validates that names are strictly ascending and all masks share one shape.
    pub fn new(frames: Vec<(String, BinaryMask)>) -> Result<Self, MaskError> {
        let (_, first) = frames.first().ok_or(MaskError::EmptySequence)?;
        let shape = first.shape();
        for pair in frames.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(MaskError::FrameOrder {
                    previous: pair[0].0.clone(),
                    next: pair[1].0.clone(),
                });
            }
        }
        for (name, mask) in &frames {
            if mask.shape() != shape {
                return Err(MaskError::SequenceShape {
                    frame: name.clone(),
                    expected: shape,
                    found: mask.shape(),
                });
            }
        }
        Ok(Self { frames })
    }

    /// Pairs `names` with `masks` positionally.
    pub fn from_parts(names: &[String], masks: Vec<BinaryMask>) -> Result<Self, MaskError> {
        if names.len() != masks.len() {
            return Err(MaskError::LengthMismatch {
                shape: masks.first().map(|m| m.shape()).unwrap_or(Shape::new(0, 0)),
                expected: names.len(),
                found: masks.len(),
            });
        }
        Self::new(names.iter().cloned().zip(masks).collect())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn shape(&self) -> Shape {
        self.frames[0].1.shape()
    }

    pub fn frame_names(&self) -> impl Iterator<Item = &str> {
        self.frames.iter().map(|(n, _)| n.as_str())
    }

    pub fn masks(&self) -> impl Iterator<Item = &BinaryMask> {
        self.frames.iter().map(|(_, m)| m)
    }

    pub fn mask(&self, index: usize) -> &BinaryMask {
        &self.frames[index].1
    }

    pub fn frames(&self) -> &[(String, BinaryMask)] {
        &self.frames
    }

    /// Mask stored under `name`, if any.
    pub fn by_name(&self, name: &str) -> Option<&BinaryMask> {
        self.frames
            .binary_search_by(|(n, _)| n.as_str().cmp(name))
            .ok()
            .map(|i| &self.frames[i].1)
    }

    /// Applies `f` to every mask, keeping frame names.
    pub fn map_masks(&self, mut f: impl FnMut(usize, &BinaryMask) -> BinaryMask) -> Result<Self, MaskError> {
        Self::new(
            self.frames
                .iter()
                .enumerate()
                .map(|(i, (n, m))| (n.clone(), f(i, m)))
                .collect(),
        )
    }
}

impl TryFrom<Vec<(String, BinaryMask)>> for MaskSequence {
    type Error = MaskError;

    fn try_from(frames: Vec<(String, BinaryMask)>) -> Result<Self, Self::Error> {
        Self::new(frames)
    }
}

impl From<MaskSequence> for Vec<(String, BinaryMask)> {
    fn from(seq: MaskSequence) -> Self {
        seq.frames
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> BinaryMask {
        BinaryMask::from_fn(h, w, |_, _| rng.random_bool(p)).unwrap()
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(BinaryMask::empty(0, 3), Err(MaskError::ZeroDimension(_))));
        assert!(matches!(BinaryMask::empty(3, 0), Err(MaskError::ZeroDimension(_))));
    }

    #[test]
    fn byte_length_checked() {
        let err = BinaryMask::from_bytes(2, 2, &[1, 0, 1]).unwrap_err();
        assert!(matches!(
            err,
            MaskError::LengthMismatch {
                expected: 4,
                found: 3,
                ..
            }
        ));
    }

    #[test]
    fn complement_keeps_tail_clear() {
        let m = BinaryMask::empty(3, 5).unwrap().not();
        assert_eq!(m.area(), 15);
        assert_eq!(m.words().len(), 1);
        assert_eq!(m.words()[0], (1 << 15) - 1);
    }

    #[test]
    fn iou_identity_and_disjoint() {
        let a = BinaryMask::from_fn(4, 4, |y, _| y < 2).unwrap();
        let b = BinaryMask::from_fn(4, 4, |y, _| y >= 2).unwrap();
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn iou_columns_vs_rows() {
        // left 2 columns vs top 2 rows: 4 shared of 12 covered
        let a = BinaryMask::from_fn(4, 4, |_, x| x < 2).unwrap();
        let b = BinaryMask::from_fn(4, 4, |y, _| y < 2).unwrap();
        assert_eq!(a.area(), 8);
        assert_eq!(b.area(), 8);
        assert!((iou(&a, &b).unwrap() - 4.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn iou_empty_conventions() {
        let e = BinaryMask::empty(5, 7).unwrap();
        let f = e.with_pixel(2, 3, true);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(iou(&e, &f).unwrap(), 0.0);
        assert_eq!(iou(&f, &e).unwrap(), 0.0);
    }

    #[test]
    fn iou_dimension_error_names_shapes() {
        let a = BinaryMask::empty(4, 4).unwrap();
        let b = BinaryMask::empty(4, 5).unwrap();
        let msg = iou(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("4x4") && msg.contains("4x5"), "{msg}");
    }

    #[test]
    fn iou_symmetric_and_reflexive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = random_mask(&mut rng, 9, 13, 0.3);
            let b = random_mask(&mut rng, 9, 13, 0.3);
            assert_eq!(iou(&a, &b).unwrap(), iou(&b, &a).unwrap());
            assert_eq!(iou(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn iou_monotone_under_shared_additions() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let mut a = random_mask(&mut rng, 8, 8, 0.4);
            let mut b = random_mask(&mut rng, 8, 8, 0.4);
            let mut prev = iou(&a, &b).unwrap();
            for _ in 0..5 {
                let (y, x) = (rng.random_range(0..8), rng.random_range(0..8));
                a = a.with_pixel(y, x, true);
                b = b.with_pixel(y, x, true);
                let next = iou(&a, &b).unwrap();
                assert!(next >= prev, "{prev} -> {next}");
                prev = next;
            }
        }
    }

    #[test]
    fn value_semantics() {
        let a = BinaryMask::empty(3, 3).unwrap();
        let b = a.with_pixel(1, 1, true);
        assert!(a.is_empty());
        assert!(b.get(1, 1));
        let _ = b.not();
        assert_eq!(b.area(), 1);
    }

    #[test]
    fn vote_counts_by_enumeration() {
        let a = BinaryMask::from_bools(2, 2, &[true, false, true, false]).unwrap();
        let b = BinaryMask::from_bools(2, 2, &[true, true, false, false]).unwrap();
        let c = BinaryMask::from_bools(2, 2, &[true, false, false, true]).unwrap();
        let counts = vote_count_stack(&[a.clone(), b.clone(), c.clone()]).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                let expected = [&a, &b, &c].iter().filter(|m| m.get(y, x)).count() as u32;
                assert_eq!(counts.get(y, x), expected);
            }
        }
        assert_eq!(counts.as_slice(), &[3, 1, 1, 1]);
    }

    #[test]
    fn vote_counts_single_and_repeated() {
        let m = BinaryMask::from_fn(5, 3, |y, x| (y + x) % 2 == 0).unwrap();
        let one = vote_count_stack(std::slice::from_ref(&m)).unwrap();
        assert_eq!(
            one.as_slice(),
            m.to_bytes().iter().map(|&b| b as u32).collect::<Vec<_>>()
        );
        let three = vote_count_stack(&[m.clone(), m.clone(), m.clone()]).unwrap();
        for (y, x) in m.ones() {
            assert_eq!(three.get(y, x), 3);
        }
    }

    #[test]
    fn vote_counts_errors() {
        assert!(matches!(vote_count_stack(&[]), Err(MaskError::EmptyInput)));
        let a = BinaryMask::empty(2, 2).unwrap();
        let b = BinaryMask::empty(2, 3).unwrap();
        assert!(matches!(
            vote_count_stack(&[a, b]),
            Err(MaskError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn ones_iterates_row_major() {
        let m = BinaryMask::from_fn(3, 30, |y, x| (y == 0 && x == 29) || (y == 2 && x == 3)).unwrap();
        assert_eq!(m.ones().collect::<Vec<_>>(), vec![(0, 29), (2, 3)]);
    }

    #[test]
    fn translation_rejects_clipping() {
        let m = BinaryMask::empty(4, 4).unwrap().with_pixel(0, 3, true);
        assert!(m.translated(1, -1).unwrap().get(1, 2));
        assert!(matches!(m.translated(0, 1), Err(MaskError::OutOfFrame { .. })));
    }

    #[test]
    fn sequence_validation() {
        let m = BinaryMask::empty(2, 2).unwrap();
        let other = BinaryMask::empty(3, 2).unwrap();
        assert!(MaskSequence::new(vec![]).is_err());
        assert!(matches!(
            MaskSequence::new(vec![("b".into(), m.clone()), ("a".into(), m.clone())]),
            Err(MaskError::FrameOrder { .. })
        ));
        assert!(matches!(
            MaskSequence::new(vec![("a".into(), m.clone()), ("a".into(), m.clone())]),
            Err(MaskError::FrameOrder { .. })
        ));
        assert!(matches!(
            MaskSequence::new(vec![("a".into(), m.clone()), ("b".into(), other)]),
            Err(MaskError::SequenceShape { .. })
        ));
        let seq = MaskSequence::new(vec![("a".into(), m.clone()), ("b".into(), m)]).unwrap();
        assert_eq!(seq.len(), 2);
        assert!(seq.by_name("b").is_some());
        assert!(seq.by_name("c").is_none());
    }

    #[test]
    fn serde_through_rle() {
        let m = BinaryMask::from_fn(3, 4, |y, x| y == x).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: BinaryMask = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }
}

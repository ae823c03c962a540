//! Region similarity J, contour accuracy F, and their mean J&F.
//!
//! J is the mean per-frame IoU. F is the boundary F-measure: boundaries are
//! the 4-connected inner contours of each mask, matched within a disk of
//! radius `ceil(tolerance_ratio * image diagonal)`. Every frame is scored;
//! global numbers are unweighted means over (video, expression) records.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{load_mask_tree, DatasetError, DatasetIndex, MaskSource, SequenceKey, SequenceMap};
use crate::mask::{check_same_shape, iou, BinaryMask, MaskError, MaskSequence};

pub const DEFAULT_TOLERANCE: f64 = 0.008;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("tolerance ratio must be positive, got {0}")]
    Tolerance(f64),
    #[error("sequences are misaligned: {reason}")]
    Misaligned { reason: String },
    #[error("no {what} sequence for {key}")]
    MissingSequence { what: &'static str, key: SequenceKey },
    #[error("{key}: {source}")]
    Unit {
        key: SequenceKey,
        source: Box<MetricsError>,
    },
}

fn check_aligned(pred: &MaskSequence, gt: &MaskSequence) -> Result<(), MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::Misaligned {
            reason: format!("{} predicted frames vs {} ground-truth frames", pred.len(), gt.len()),
        });
    }
    if let Some((p, g)) = pred.frame_names().zip(gt.frame_names()).find(|(p, g)| p != g) {
        return Err(MetricsError::Misaligned {
            reason: format!("frame `{p}` paired with `{g}`"),
        });
    }
    Ok(())
}

/// Mean per-frame IoU.
pub fn region_j(pred: &MaskSequence, gt: &MaskSequence) -> Result<f64, MetricsError> {
    check_aligned(pred, gt)?;
    let total = pred
        .masks()
        .zip(gt.masks())
        .map(|(p, g)| iou(p, g))
        .sum::<Result<f64, _>>()?;
    Ok(total / gt.len() as f64)
}

pub fn boundary_radius(height: usize, width: usize, tolerance_ratio: f64) -> usize {
    let diag = ((height * height + width * width) as f64).sqrt();
    (tolerance_ratio * diag).ceil() as usize
}

/// Boundary F-measure of one frame.
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask, tolerance_ratio: f64) -> Result<f64, MetricsError> {
    if tolerance_ratio.is_nan() || tolerance_ratio <= 0.0 {
        return Err(MetricsError::Tolerance(tolerance_ratio));
    }
    check_same_shape(pred.shape(), gt.shape())?;
    let pred_b = pred.boundary();
    let gt_b = gt.boundary();
    let (n_pred, n_gt) = (pred_b.area(), gt_b.area());
    match (n_pred, n_gt) {
        (0, 0) => return Ok(1.0),
        (0, _) | (_, 0) => return Ok(0.0),
        _ => {}
    }
    let radius = boundary_radius(pred.height(), pred.width(), tolerance_ratio);
    let precision = pred_b.intersection_area(&gt_b.dilated_disk(radius))? as f64 / n_pred as f64;
    let recall = gt_b.intersection_area(&pred_b.dilated_disk(radius))? as f64 / n_gt as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Mean per-frame boundary F.
pub fn contour_f(pred: &MaskSequence, gt: &MaskSequence, tolerance_ratio: f64) -> Result<f64, MetricsError> {
    check_aligned(pred, gt)?;
    let total = pred
        .masks()
        .zip(gt.masks())
        .map(|(p, g)| boundary_f(p, g, tolerance_ratio))
        .sum::<Result<f64, _>>()?;
    Ok(total / gt.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub video_id: String,
    pub expression_id: String,
    pub j: f64,
    pub f: f64,
    /// `(j + f) / 2`
    pub jf: f64,
}

impl MetricsRecord {
    pub fn new(key: &SequenceKey, j: f64, f: f64) -> Self {
        Self {
            video_id: key.video_id.clone(),
            expression_id: key.expression_id.clone(),
            j,
            f,
            jf: (j + f) / 2.0,
        }
    }
}

pub fn score_sequence(
    key: &SequenceKey,
    pred: &MaskSequence,
    gt: &MaskSequence,
    tolerance_ratio: f64,
) -> Result<MetricsRecord, MetricsError> {
    Ok(MetricsRecord::new(
        key,
        region_j(pred, gt)?,
        contour_f(pred, gt, tolerance_ratio)?,
    ))
}

/// Global J, F and J&F.
#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    #[serde(rename = "J&F")]
    pub jf: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "F")]
    pub f: f64,
}

impl Summary {
    /// Single-line JSON with every value rounded to four decimals.
    pub fn to_json(&self) -> String {
        format!(
            "{{\"J&F\": {:.4}, \"J\": {:.4}, \"F\": {:.4}}}",
            self.jf, self.j, self.f
        )
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateReport {
    /// Ordered by `(video_id, expression_id)`.
    pub records: Vec<MetricsRecord>,
    pub summary: Summary,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl AggregateReport {
    /// Sorts records and averages them. An empty report scores zero.
    pub fn from_records(mut records: Vec<MetricsRecord>) -> Self {
        records.sort_by(|a, b| (&a.video_id, &a.expression_id).cmp(&(&b.video_id, &b.expression_id)));
        let n = records.len().max(1) as f64;
        let mean = |f: fn(&MetricsRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
        let summary = Summary {
            jf: mean(|r| r.jf),
            j: mean(|r| r.j),
            f: mean(|r| r.f),
        };
        Self { records, summary }
    }

    /// `video_id,expression_id,J,F,JF`, one row per record, four decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("video_id,expression_id,J,F,JF\n");
        for r in &self.records {
            writeln!(
                out,
                "{},{},{:.4},{:.4},{:.4}",
                csv_field(&r.video_id),
                csv_field(&r.expression_id),
                r.j,
                r.f,
                r.jf
            )
            .expect("writing to a String");
        }
        out
    }

    /// Writes `per_expression.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("per_expression.csv"), self.to_csv())?;
        std::fs::write(dir.join("summary.json"), self.summary.to_json() + "\n")
    }
}

/// Scores in-memory predictions against ground truth for every unit of `index`.
pub fn evaluate_sequences(
    pred: &SequenceMap,
    gt: &SequenceMap,
    index: &DatasetIndex,
    tolerance_ratio: f64,
) -> Result<AggregateReport, MetricsError> {
    if tolerance_ratio.is_nan() || tolerance_ratio <= 0.0 {
        return Err(MetricsError::Tolerance(tolerance_ratio));
    }
    let keys = index.keys();
    let records = keys
        .par_iter()
        .map(|key| {
            let p = pred.get(key).ok_or_else(|| MetricsError::MissingSequence {
                what: "predicted",
                key: key.clone(),
            })?;
            let g = gt.get(key).ok_or_else(|| MetricsError::MissingSequence {
                what: "ground-truth",
                key: key.clone(),
            })?;
            score_sequence(key, p, g, tolerance_ratio).map_err(|e| MetricsError::Unit {
                key: key.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AggregateReport::from_records(records))
}

/// Loads both trees (strictly complete) and scores them.
pub fn evaluate(
    pred_root: impl AsRef<Path>,
    gt_root: impl AsRef<Path>,
    index: &DatasetIndex,
    tolerance_ratio: f64,
) -> Result<AggregateReport, MetricsError> {
    let gt = load_mask_tree(gt_root, index, MaskSource::GroundTruth)?;
    let pred = load_mask_tree(pred_root, index, MaskSource::Prediction)?;
    evaluate_sequences(&pred, &gt, index, tolerance_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(n: usize, top: usize, left: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(n, n, |y, x| {
            (top..top + side).contains(&y) && (left..left + side).contains(&x)
        })
        .unwrap()
    }

    /// All-pairs boundary matcher: a boundary pixel matches when some pixel
    /// of the other boundary lies within Euclidean distance `radius`.
    fn brute_force_f(pred: &BinaryMask, gt: &BinaryMask, radius: f64) -> f64 {
        let boundary = |m: &BinaryMask| -> Vec<(i64, i64)> {
            let (h, w) = (m.height() as i64, m.width() as i64);
            let mut out = vec![];
            for y in 0..h {
                for x in 0..w {
                    if !m.get(y as usize, x as usize) {
                        continue;
                    }
                    let bg =
                        |yy: i64, xx: i64| yy < 0 || xx < 0 || yy >= h || xx >= w || !m.get(yy as usize, xx as usize);
                    if bg(y - 1, x) || bg(y + 1, x) || bg(y, x - 1) || bg(y, x + 1) {
                        out.push((y, x));
                    }
                }
            }
            out
        };
        let (pb, gb) = (boundary(pred), boundary(gt));
        if pb.is_empty() && gb.is_empty() {
            return 1.0;
        }
        if pb.is_empty() || gb.is_empty() {
            return 0.0;
        }
        let matched = |from: &[(i64, i64)], to: &[(i64, i64)]| {
            from.iter()
                .filter(|(y, x)| {
                    to.iter()
                        .any(|(v, u)| (((y - v).pow(2) + (x - u).pow(2)) as f64).sqrt() <= radius)
                })
                .count() as f64
        };
        let p = matched(&pb, &gb) / pb.len() as f64;
        let r = matched(&gb, &pb) / gb.len() as f64;
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    #[test]
    fn default_radius_on_20x20_is_one() {
        assert_eq!(boundary_radius(20, 20, DEFAULT_TOLERANCE), 1);
        assert_eq!(boundary_radius(480, 854, DEFAULT_TOLERANCE), 8);
    }

    #[test]
    fn shifted_square_golden_values() {
        let gt = square(20, 7, 7, 6);
        // one-pixel shift: every boundary pixel is within the radius-1 disk
        let one = square(20, 7, 8, 6);
        let f1 = boundary_f(&one, &gt, DEFAULT_TOLERANCE).unwrap();
        assert!((f1 - 1.0).abs() < 1e-12);
        assert!((f1 - brute_force_f(&one, &gt, 1.0)).abs() < 1e-12);
        // two-pixel shift: 12 of 20 boundary pixels match in each direction
        // (top/bottom rows lose one corner each, the near side keeps its two end pixels)
        let two = square(20, 7, 9, 6);
        let f2 = boundary_f(&two, &gt, DEFAULT_TOLERANCE).unwrap();
        assert!((f2 - 0.6).abs() < 1e-12, "{f2}");
        assert!((f2 - brute_force_f(&two, &gt, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn boundary_f_matches_brute_force_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..60 {
            let h = rng.random_range(3..25);
            let w = rng.random_range(3..25);
            let p1 = rng.random_range(0.1..0.9);
            let p2 = rng.random_range(0.1..0.9);
            let a = BinaryMask::from_fn(h, w, |_, _| rng.random_bool(p1)).unwrap();
            let b = BinaryMask::from_fn(h, w, |_, _| rng.random_bool(p2)).unwrap();
            let tol = rng.random_range(0.01..0.2);
            let r = boundary_radius(h, w, tol) as f64;
            let got = boundary_f(&a, &b, tol).unwrap();
            assert!((got - brute_force_f(&a, &b, r)).abs() < 1e-12);
            assert_eq!(got, boundary_f(&b, &a, tol).unwrap());
        }
    }

    #[test]
    fn boundary_f_edge_cases() {
        let e = BinaryMask::empty(20, 20).unwrap();
        let sq = square(20, 3, 3, 5);
        assert_eq!(boundary_f(&sq, &sq, DEFAULT_TOLERANCE).unwrap(), 1.0);
        assert_eq!(boundary_f(&e, &e, DEFAULT_TOLERANCE).unwrap(), 1.0);
        assert_eq!(boundary_f(&e, &sq, DEFAULT_TOLERANCE).unwrap(), 0.0);
        assert_eq!(boundary_f(&sq, &e, DEFAULT_TOLERANCE).unwrap(), 0.0);
        // far apart: P = R = 0
        assert_eq!(
            boundary_f(&square(20, 0, 0, 3), &square(20, 15, 15, 3), DEFAULT_TOLERANCE).unwrap(),
            0.0
        );
        assert!(matches!(boundary_f(&sq, &sq, 0.0), Err(MetricsError::Tolerance(_))));
        assert!(boundary_f(&sq, &BinaryMask::empty(20, 21).unwrap(), 0.008).is_err());
    }

    fn seq(masks: Vec<BinaryMask>) -> MaskSequence {
        let names: Vec<String> = (0..masks.len()).map(|i| format!("{i:05}")).collect();
        MaskSequence::from_parts(&names, masks).unwrap()
    }

    #[test]
    fn region_j_examples() {
        let cols = BinaryMask::from_fn(4, 4, |_, x| x < 2).unwrap();
        let rows = BinaryMask::from_fn(4, 4, |y, _| y < 2).unwrap();
        let gt = seq(vec![cols.clone(), cols.clone()]);
        assert_eq!(region_j(&gt, &gt).unwrap(), 1.0);
        let pred = seq(vec![cols.clone(), rows]);
        assert!((region_j(&pred, &gt).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let empty = BinaryMask::empty(4, 4).unwrap();
        assert_eq!(region_j(&seq(vec![empty.clone(), empty]), &gt).unwrap(), 0.0);
    }

    #[test]
    fn misaligned_sequences_rejected() {
        let m = BinaryMask::empty(2, 2).unwrap();
        let a = seq(vec![m.clone(), m.clone()]);
        let b = seq(vec![m.clone()]);
        assert!(matches!(region_j(&a, &b), Err(MetricsError::Misaligned { .. })));
        let c = MaskSequence::new(vec![("00000".into(), m.clone()), ("00002".into(), m)]).unwrap();
        assert!(matches!(contour_f(&a, &c, 0.008), Err(MetricsError::Misaligned { .. })));
    }

    #[test]
    fn j_invariant_under_joint_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let a = BinaryMask::from_fn(16, 16, |y, x| {
                (4..12).contains(&y) && (4..12).contains(&x) && rng.random_bool(0.6)
            })
            .unwrap();
            let b = BinaryMask::from_fn(16, 16, |y, x| {
                (4..12).contains(&y) && (4..12).contains(&x) && rng.random_bool(0.6)
            })
            .unwrap();
            let (dy, dx) = (
                rng.random_range(-4i32..=4) as isize,
                rng.random_range(-4i32..=4) as isize,
            );
            let before = region_j(&seq(vec![a.clone()]), &seq(vec![b.clone()])).unwrap();
            let after = region_j(
                &seq(vec![a.translated(dy, dx).unwrap()]),
                &seq(vec![b.translated(dy, dx).unwrap()]),
            )
            .unwrap();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn erosion_never_increases_j() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..30 {
            let gt = BinaryMask::from_fn(24, 24, |_, _| rng.random_bool(0.7)).unwrap();
            let gts = seq(vec![gt.clone()]);
            let mut pred = gt.clone();
            let mut prev = region_j(&seq(vec![pred.clone()]), &gts).unwrap();
            for _ in 0..4 {
                pred = pred.eroded();
                let j = region_j(&seq(vec![pred.clone()]), &gts).unwrap();
                assert!(j <= prev);
                prev = j;
            }
        }
    }

    #[test]
    fn aggregate_is_unweighted_mean_over_records() {
        let report = AggregateReport::from_records(vec![
            MetricsRecord::new(&SequenceKey::new("b", "0"), 0.0, 0.0),
            MetricsRecord::new(&SequenceKey::new("a", "1"), 1.0, 1.0),
        ]);
        assert_eq!(report.summary.jf, 0.5);
        assert_eq!(report.records[0].video_id, "a");
        assert_eq!(
            report.to_csv(),
            "video_id,expression_id,J,F,JF\na,1,1.0000,1.0000,1.0000\nb,0,0.0000,0.0000,0.0000\n"
        );
        assert_eq!(report.summary.to_json(), r#"{"J&F": 0.5000, "J": 0.5000, "F": 0.5000}"#);
        let back = Summary::from_json(&report.summary.to_json()).unwrap();
        assert_eq!(back, report.summary);
    }

    #[test]
    fn record_jf_is_exact_mean() {
        let r = MetricsRecord::new(&SequenceKey::new("v", "0"), 0.3, 0.7000000000000001);
        assert_eq!(r.jf, (r.j + r.f) / 2.0);
    }

    #[test]
    fn csv_quotes_awkward_ids() {
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("plain"), "plain");
    }
}

//! Detection-set correction: turns an arbitrary detection list into exactly
//! two kidney ROIs or an explicit exclusion.
//!
//! Rules: zero detections exclude the image from classification; a single
//! detection gets a synthetic partner by mirroring across the vertical
//! image centerline; three or more detections are truncated to the two most
//! confident. The emitted pair is always ordered left-to-right.

use serde::{Deserialize, Serialize};

use crate::dataprep::Label;
use crate::detector::iou;
use crate::imaging::{mirror_box, BoxXYXY};

/// A mirrored single detection straddling the midline overlaps its own
/// reflection; above this IoU the pair is flagged, not rejected.
pub const MIRROR_COLLISION_IOU: f32 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

/// How the two-box pair was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "synthetic_side")]
pub enum Provenance {
    BothDetected,
    MirrorSynthesized(Side),
    TruncatedFromThree,
}

/// Exactly two ROIs ordered left-to-right by x1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoiPair {
    pub left: BoxXYXY,
    pub right: BoxXYXY,
    pub provenance: Provenance,
    /// Set when a synthesized mirror overlaps its source with IoU above
    /// [`MIRROR_COLLISION_IOU`] (single detection straddling the midline).
    pub mirror_collision: bool,
}

impl RoiPair {
    pub fn boxes(&self) -> [BoxXYXY; 2] {
        [self.left, self.right]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "outcome")]
pub enum CorrectionOutcome {
    Excluded,
    Pair(RoiPair),
}

impl CorrectionOutcome {
    pub fn pair(&self) -> Option<&RoiPair> {
        match self {
            CorrectionOutcome::Pair(p) => Some(p),
            CorrectionOutcome::Excluded => None,
        }
    }

    pub fn is_excluded(&self) -> bool {
        matches!(self, CorrectionOutcome::Excluded)
    }
}

/// Applies the correction rules to a detection list sorted by descending
/// confidence (the detector contract).
pub fn correct(detections: &[BoxXYXY], image_width: u32) -> CorrectionOutcome {
    match detections {
        [] => CorrectionOutcome::Excluded,
        [only] => {
            let mirrored = mirror_box(only, image_width);
            let collision = iou(only, &mirrored) > MIRROR_COLLISION_IOU;
            let (left, right, synthetic) = if mirrored.x1 < only.x1 {
                (mirrored, *only, Side::Left)
            } else {
                (*only, mirrored, Side::Right)
            };
            CorrectionOutcome::Pair(RoiPair {
                left,
                right,
                provenance: Provenance::MirrorSynthesized(synthetic),
                mirror_collision: collision,
            })
        }
        more => {
            let provenance = if more.len() == 2 {
                Provenance::BothDetected
            } else {
                Provenance::TruncatedFromThree
            };
            let (a, b) = (more[0], more[1]);
            let (left, right) = if a.x1 <= b.x1 { (a, b) } else { (b, a) };
            CorrectionOutcome::Pair(RoiPair {
                left,
                right,
                provenance,
                mirror_collision: false,
            })
        }
    }
}

/// Detection-count histogram split by label, buckets 0..=3. Counts of four
/// or more fold into the "3" bucket and set `overflow_folded`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionHistogram {
    pub stone: [u64; 4],
    pub normal: [u64; 4],
    pub unlabeled: [u64; 4],
    pub overflow_folded: bool,
}

impl DetectionHistogram {
    pub fn bucket_totals(&self) -> [u64; 4] {
        let mut t = [0u64; 4];
        for i in 0..4 {
            t[i] = self.stone[i] + self.normal[i] + self.unlabeled[i];
        }
        t
    }

    pub fn total(&self) -> u64 {
        self.bucket_totals().iter().sum()
    }
}

/// Builds the per-label detection-count table from (count, label) pairs.
pub fn count_histogram<I>(outcomes: I) -> DetectionHistogram
where
    I: IntoIterator<Item = (usize, Option<Label>)>,
{
    let mut h = DetectionHistogram::default();
    for (count, label) in outcomes {
        let bucket = if count >= 4 {
            h.overflow_folded = true;
            3
        } else {
            count.min(3)
        };
        let row = match label {
            Some(Label::Stone) => &mut h.stone,
            Some(Label::Normal) => &mut h.normal,
            None => &mut h.unlabeled,
        };
        row[bucket] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn b(x1: f32, y1: f32, x2: f32, y2: f32, conf: f32) -> BoxXYXY {
        BoxXYXY::new(x1, y1, x2, y2, conf)
    }

    #[test]
    fn empty_is_excluded() {
        assert!(correct(&[], 512).is_excluded());
    }

    #[test]
    fn single_box_gets_mirror_partner() {
        let only = b(100.0, 150.0, 200.0, 300.0, 0.8);
        let out = correct(&[only], 512);
        let pair = out.pair().unwrap();
        assert_eq!(pair.left, only);
        assert_eq!(
            (pair.right.x1, pair.right.y1, pair.right.x2, pair.right.y2),
            (312.0, 150.0, 412.0, 300.0)
        );
        assert_eq!(pair.provenance, Provenance::MirrorSynthesized(Side::Right));
        assert!(!pair.mirror_collision);
    }

    #[test]
    fn three_boxes_truncate_to_top_two_confidences() {
        let d = [
            b(200.0, 10.0, 260.0, 80.0, 0.9),
            b(40.0, 10.0, 100.0, 80.0, 0.8),
            b(120.0, 10.0, 180.0, 80.0, 0.7),
        ];
        let out = correct(&d, 320);
        let pair = out.pair().unwrap();
        assert_eq!(pair.provenance, Provenance::TruncatedFromThree);
        assert_eq!(pair.left.confidence, 0.8);
        assert_eq!(pair.right.confidence, 0.9);
        assert!(pair.left.x1 <= pair.right.x1);
    }

    #[test]
    fn two_boxes_pass_through_ordered() {
        let d = [
            b(200.0, 10.0, 260.0, 80.0, 0.9),
            b(40.0, 10.0, 100.0, 80.0, 0.8),
        ];
        let pair = correct(&d, 320).pair().copied().unwrap();
        assert_eq!(pair.provenance, Provenance::BothDetected);
        assert_eq!(pair.left.x1, 40.0);
        assert_eq!(pair.right.x1, 200.0);
    }

    #[test]
    fn midline_straddler_flags_collision() {
        // box symmetric around x=160 in a 320-wide image mirrors onto itself
        let d = [b(110.0, 50.0, 210.0, 150.0, 0.9)];
        let pair = correct(&d, 320).pair().copied().unwrap();
        assert!(pair.mirror_collision);
    }

    #[test]
    fn synthetic_box_y_extent_matches_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let x1: f32 = rng.random_range(0.0..400.0);
            let y1: f32 = rng.random_range(0.0..400.0);
            let w: f32 = rng.random_range(1.0..100.0);
            let h: f32 = rng.random_range(1.0..100.0);
            let only = b(x1, y1, x1 + w, y1 + h, 0.7);
            let pair = correct(&[only], 512).pair().copied().unwrap();
            let (src, syn) = match pair.provenance {
                Provenance::MirrorSynthesized(Side::Left) => (pair.right, pair.left),
                Provenance::MirrorSynthesized(Side::Right) => (pair.left, pair.right),
                _ => panic!("single detection must mirror"),
            };
            assert_eq!(src, only);
            assert_eq!((syn.y1, syn.y2), (only.y1, only.y2));
            assert_eq!(syn.confidence, only.confidence);
        }
    }

    #[test]
    fn histogram_table2_shape() {
        let mut outcomes = Vec::new();
        for (count, stone_n, normal_n) in [(0, 14, 9), (1, 50, 41), (2, 99, 131), (3, 2, 0)] {
            for _ in 0..stone_n {
                outcomes.push((count, Some(Label::Stone)));
            }
            for _ in 0..normal_n {
                outcomes.push((count, Some(Label::Normal)));
            }
        }
        let h = count_histogram(outcomes);
        assert_eq!(h.stone, [14, 50, 99, 2]);
        assert_eq!(h.normal, [9, 41, 131, 0]);
        assert_eq!(h.bucket_totals(), [23, 91, 230, 2]);
        assert_eq!(h.total(), 346);
        assert!(!h.overflow_folded);
    }

    #[test]
    fn histogram_trivia() {
        assert_eq!(count_histogram(std::iter::empty()), DetectionHistogram::default());
        let h = count_histogram([(2usize, None)]);
        assert_eq!(h.unlabeled, [0, 0, 1, 0]);
        let folded = count_histogram([(7usize, Some(Label::Stone))]);
        assert_eq!(folded.stone[3], 1);
        assert!(folded.overflow_folded);
    }
}

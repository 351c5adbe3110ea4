//! Kidney detector front end: runs a backend on the letterboxed image and
//! turns raw single-class YOLO-style output into a confidence-filtered,
//! NMS-deduplicated box list in source-image coordinates.

use serde::{Deserialize, Serialize};

use crate::backend::InferenceBackend;
use crate::error::{Error, Result};
use crate::imaging::{self, BoxXYXY, ImageBuffer};

/// Detector postprocessing knobs. The defaults follow common detector
/// export conventions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub conf_threshold: f32,
    pub iou_threshold: f32,
    pub input_side: u32,
    pub max_detections: usize,
    pub pad_value: u8,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            conf_threshold: 0.25,
            iou_threshold: 0.45,
            input_side: 640,
            max_detections: 8,
            pad_value: imaging::PAD_GRAY,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.conf_threshold > 0.0 && self.conf_threshold < 1.0) {
            return Err(Error::Config(format!(
                "conf_threshold must be in (0,1), got {}",
                self.conf_threshold
            )));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(Error::Config(format!(
                "iou_threshold must be in (0,1), got {}",
                self.iou_threshold
            )));
        }
        if self.input_side == 0 {
            return Err(Error::Config("input_side must be >= 1".into()));
        }
        Ok(())
    }
}

/// One raw output row in letterbox space: center, size, class score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawRow {
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
    pub score: f32,
}

/// Decoded raw network output, rows with non-positive extents dropped.
#[derive(Debug, Clone, Default)]
pub struct RawDetections {
    pub rows: Vec<RawRow>,
}

/// Decodes a single-class detector output of shape `(1, 5, N)` or
/// `(1, N, 5)` (leading batch dims of 1 are ignored). The layout is
/// auto-detected from the declared shape; the ambiguous 5x5 case is read
/// attributes-first.
pub fn decode_output(values: &[f32], shape: &[usize]) -> Result<RawDetections> {
    let mismatch = || Error::ShapeMismatch {
        expected: "(1, 5, N) or (1, N, 5)".into(),
        got: shape.to_vec(),
    };
    let dims: Vec<usize> = {
        let mut d: Vec<usize> = shape.to_vec();
        while d.len() > 2 && d[0] == 1 {
            d.remove(0);
        }
        d
    };
    if dims.len() != 2 || values.len() != dims[0] * dims[1] {
        return Err(mismatch());
    }
    let (a, b) = (dims[0], dims[1]);
    let attrs_first = if a == 5 {
        true
    } else if b == 5 {
        false
    } else {
        return Err(mismatch());
    };
    let n = if attrs_first { b } else { a };
    let get = |attr: usize, row: usize| -> f32 {
        if attrs_first {
            values[attr * n + row]
        } else {
            values[row * 5 + attr]
        }
    };
    let mut rows = Vec::new();
    for j in 0..n {
        let row = RawRow {
            cx: get(0, j),
            cy: get(1, j),
            w: get(2, j),
            h: get(3, j),
            score: get(4, j),
        };
        if row.w > 0.0 && row.h > 0.0 {
            rows.push(row);
        }
    }
    Ok(RawDetections { rows })
}

/// Intersection over union of two canonical boxes; 0 when disjoint.
pub fn iou(a: &BoxXYXY, b: &BoxXYXY) -> f32 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn rank(a: &BoxXYXY, b: &BoxXYXY) -> std::cmp::Ordering {
    b.confidence
        .partial_cmp(&a.confidence)
        .unwrap_or(std::cmp::Ordering::Equal)
        .then(a.x1.partial_cmp(&b.x1).unwrap_or(std::cmp::Ordering::Equal))
        .then(a.y1.partial_cmp(&b.y1).unwrap_or(std::cmp::Ordering::Equal))
}

/// Greedy non-maximum suppression. Repeatedly keeps the highest-confidence
/// box (ties broken by smaller x1, then smaller y1) and discards every box
/// with IoU strictly above `iou_threshold` against it. Output is sorted by
/// descending confidence under the same tie-break.
pub fn nms(boxes: &[BoxXYXY], iou_threshold: f32) -> Vec<BoxXYXY> {
    let mut sorted: Vec<BoxXYXY> = boxes.to_vec();
    sorted.sort_by(rank);
    let mut kept: Vec<BoxXYXY> = Vec::new();
    for b in sorted {
        if kept.iter().all(|k| iou(k, &b) <= iou_threshold) {
            kept.push(b);
        }
    }
    kept
}

/// Full detector stage: letterbox, backend forward pass, decode, filter,
/// NMS, unmap to source coordinates. Boxes that collapse inside the
/// padding band are dropped.
pub fn detect(
    img: &ImageBuffer,
    backend: &dyn InferenceBackend,
    cfg: &DetectorConfig,
) -> Result<Vec<BoxXYXY>> {
    cfg.validate()?;
    let (lb, map) = imaging::letterbox(img, cfg.input_side, cfg.pad_value);
    let input = imaging::unit_tensor(&lb);
    let side = cfg.input_side as usize;
    let (out, out_shape) = backend.run(&input, &[1, 3, side, side])?;
    let raw = decode_output(&out, &out_shape)?;

    let candidates: Vec<BoxXYXY> = raw
        .rows
        .iter()
        .filter(|r| r.score >= cfg.conf_threshold)
        .map(|r| {
            BoxXYXY::new(
                r.cx - r.w / 2.0,
                r.cy - r.h / 2.0,
                r.cx + r.w / 2.0,
                r.cy + r.h / 2.0,
                r.score,
            )
        })
        .collect();

    let mut boxes: Vec<BoxXYXY> = nms(&candidates, cfg.iou_threshold)
        .iter()
        .filter_map(|b| imaging::unmap_box(b, &map).ok())
        .collect();
    boxes.sort_by(rank);
    boxes.truncate(cfg.max_detections);
    Ok(boxes)
}

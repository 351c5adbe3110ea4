//! Confusion matrices and derived metrics from classified results plus
//! ground-truth labels, and the detection-count histogram.
//!
//! Per-crop evaluation is primary; the image-level matrix (any-crop-stone
//! ground truth against the any-positive image verdict) is a secondary
//! table. Undefined ratios are reported as absent, never as zero.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corrector::{count_histogram, DetectionHistogram};
use crate::dataprep::Label;
use crate::error::{Error, Result};
use crate::pipeline::ImageResult;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Tallies one sample; stone is the positive class.
    pub fn record(&mut self, truth: Label, predicted_positive: bool) {
        match (truth, predicted_positive) {
            (Label::Stone, true) => self.tp += 1,
            (Label::Stone, false) => self.fn_ += 1,
            (Label::Normal, true) => self.fp += 1,
            (Label::Normal, false) => self.tn += 1,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// Standard binary metrics plus both readings of the FP/FN "rates":
/// class-conditional (the default reading) and share-of-total-errors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    /// fp / (fp + tn), the false positive rate over actual negatives.
    pub fp_rate: Option<f64>,
    /// fn / (fn + tp), the false negative rate over actual positives.
    pub fn_rate: Option<f64>,
    /// fp / (fp + fn), the false-positive share of all errors.
    pub fp_error_share: Option<f64>,
    /// fn / (fp + fn), the false-negative share of all errors.
    pub fn_error_share: Option<f64>,
}

impl MetricSet {
    pub fn from_matrix(m: &ConfusionMatrix) -> Self {
        let precision = ratio(m.tp, m.tp + m.fp);
        let recall = ratio(m.tp, m.tp + m.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Self {
            precision,
            recall,
            f1,
            accuracy: ratio(m.tp + m.tn, m.total()),
            fp_rate: ratio(m.fp, m.fp + m.tn),
            fn_rate: ratio(m.fn_, m.fn_ + m.tp),
            fp_error_share: ratio(m.fp, m.fp + m.fn_),
            fn_error_share: ratio(m.fn_, m.fp + m.fn_),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "precision" => self.precision,
            "recall" => self.recall,
            "f1" => self.f1,
            "accuracy" => self.accuracy,
            "fp_rate" => self.fp_rate,
            "fn_rate" => self.fn_rate,
            "fp_error_share" => self.fp_error_share,
            "fn_error_share" => self.fn_error_share,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub crop_matrix: ConfusionMatrix,
    pub crop_metrics: MetricSet,
    /// Micro-averaged F1 over both classes; for binary classification this
    /// equals accuracy.
    pub micro_f1: Option<f64>,
    pub excluded_images: usize,
    pub errored_images: usize,
    pub detection_histogram: DetectionHistogram,
    pub image_matrix: Option<ConfusionMatrix>,
    pub image_metrics: Option<MetricSet>,
}

/// Computes the evaluation report. `labels` is keyed by crop id
/// (`<stem>_kidney{0,1}`); every scored crop must have a label.
pub fn score(results: &[ImageResult], labels: &BTreeMap<String, Label>) -> Result<EvalReport> {
    let mut crop_matrix = ConfusionMatrix::default();
    let mut image_matrix = ConfusionMatrix::default();
    let mut image_samples = 0u64;
    let mut excluded_images = 0;
    let mut errored_images = 0;
    let mut histogram_items = Vec::new();

    for r in results {
        if r.error.is_some() {
            errored_images += 1;
            continue;
        }
        let Some(outcome) = &r.outcome else {
            errored_images += 1;
            continue;
        };
        if outcome.is_excluded() {
            excluded_images += 1;
            histogram_items.push((r.detection_count, None));
            continue;
        }
        let mut truths = Vec::with_capacity(2);
        for v in &r.roi_verdicts {
            let truth = *labels
                .get(&v.roi_id)
                .ok_or_else(|| Error::MissingLabel(v.roi_id.clone()))?;
            crop_matrix.record(truth, v.positive);
            truths.push(truth);
        }
        // image-level: stone-positive if any crop is stone, predicted by
        // the any-positive aggregate
        let image_truth = if truths.contains(&Label::Stone) {
            Label::Stone
        } else {
            Label::Normal
        };
        histogram_items.push((r.detection_count, Some(image_truth)));
        if let Some(iv) = &r.image_verdict {
            image_matrix.record(image_truth, iv.positive);
            image_samples += 1;
        }
    }

    let crop_metrics = MetricSet::from_matrix(&crop_matrix);
    let (image_matrix, image_metrics) = if image_samples > 0 {
        (Some(image_matrix), Some(MetricSet::from_matrix(&image_matrix)))
    } else {
        (None, None)
    };
    Ok(EvalReport {
        micro_f1: crop_metrics.accuracy,
        crop_matrix,
        crop_metrics,
        excluded_images,
        errored_images,
        detection_histogram: count_histogram(histogram_items),
        image_matrix,
        image_metrics,
    })
}

/// Reads a labels CSV (`crop_id,label`, optional header) into a map.
pub fn read_labels_csv(path: &Path) -> Result<BTreeMap<String, Label>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut labels = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("crop_id,label")) {
            continue;
        }
        let (id, label) = line.split_once(',').ok_or_else(|| {
            Error::Config(format!("{}:{}: expected `crop_id,label`", path.display(), i + 1))
        })?;
        labels.insert(id.trim().to_string(), label.trim().parse()?);
    }
    Ok(labels)
}

/// One row of a reference comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricCheck {
    pub metric: String,
    pub observed: Option<f64>,
    pub reference: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Compares observed per-crop metrics against reference targets. A metric
/// passes when |observed - reference| <= tolerance; an absent observed
/// value fails.
pub fn compare_to_reference(
    report: &EvalReport,
    reference: &BTreeMap<String, f64>,
    tolerance: f64,
) -> Vec<MetricCheck> {
    reference
        .iter()
        .map(|(metric, &target)| {
            let observed = match metric.as_str() {
                "micro_f1" => report.micro_f1,
                name => report.crop_metrics.get(name),
            };
            let pass = observed.is_some_and(|o| (o - target).abs() <= tolerance);
            MetricCheck {
                metric: metric.clone(),
                observed,
                reference: target,
                tolerance,
                pass,
            }
        })
        .collect()
}

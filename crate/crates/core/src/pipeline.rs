//! Batch orchestration: decode, detect, correct, crop, classify, aggregate
//! over a manifest of images, with per-stage wall-clock accounting.
//!
//! Per-image errors are recorded in the result and never abort the batch.
//! Results are keyed by manifest order, so the output is identical for any
//! worker count.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backend::{InferenceBackend, ReplayFixture, StubBackend};
use crate::classifier::{self, ClassifierConfig, ImageVerdict, Verdict};
use crate::corrector::{self, CorrectionOutcome};
use crate::dataprep::{Manifest, ManifestRow};
use crate::detector::{self, DetectorConfig};
use crate::error::{Error, Result};
use crate::imaging;

/// Where the detect stage gets its boxes.
#[derive(Clone)]
pub enum DetectorSource {
    /// Exported ONNX model file (feature `onnx`).
    OnnxModel(PathBuf),
    /// JSON Lines replay fixture, source-image coordinates.
    ReplayFile(PathBuf),
    /// Pre-built fixture, for tests.
    ReplayInline(ReplayFixture),
    /// Arbitrary backend instance, for tests and benchmarks.
    Backend(Arc<dyn InferenceBackend>),
}

impl std::fmt::Debug for DetectorSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::OnnxModel(p) => f.debug_tuple("OnnxModel").field(p).finish(),
            Self::ReplayFile(p) => f.debug_tuple("ReplayFile").field(p).finish(),
            Self::ReplayInline(_) => f.write_str("ReplayInline(..)"),
            Self::Backend(_) => f.write_str("Backend(..)"),
        }
    }
}

/// Where the classify stage gets its scores.
#[derive(Clone)]
pub enum ClassifierSource {
    /// Exported ONNX model file (feature `onnx`).
    OnnxModel(PathBuf),
    /// Constant-logit stub, for weight-free pipeline runs.
    ConstLogit(f32),
    /// Arbitrary backend instance, for tests and benchmarks.
    Backend(Arc<dyn InferenceBackend>),
}

impl std::fmt::Debug for ClassifierSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::OnnxModel(p) => f.debug_tuple("OnnxModel").field(p).finish(),
            Self::ConstLogit(l) => f.debug_tuple("ConstLogit").field(l).finish(),
            Self::Backend(_) => f.write_str("Backend(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub detector: DetectorConfig,
    pub classifier: ClassifierConfig,
    pub detector_source: DetectorSource,
    pub classifier_source: ClassifierSource,
    pub workers: usize,
    pub crop_output_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(detector_source: DetectorSource, classifier_source: ClassifierSource) -> Self {
        Self {
            detector: DetectorConfig::default(),
            classifier: ClassifierConfig::default(),
            detector_source,
            classifier_source,
            workers: 1,
            crop_output_dir: None,
        }
    }

    fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.classifier.validate()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        Ok(())
    }
}

/// Pipeline stage names used in error records and timing tables.
pub const STAGE_DECODE: &str = "decode";
pub const STAGE_DETECT: &str = "detect";
pub const STAGE_CLASSIFY: &str = "classify";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageError {
    pub stage: String,
    pub message: String,
}

/// Wall-clock stage durations for one image, milliseconds. Excluded from
/// the serialized result so results files are byte-reproducible; latency
/// goes through [`bench`] instead.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub decode_ms: f64,
    pub detect_ms: f64,
    pub classify_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageResult {
    pub stem: String,
    pub detection_count: usize,
    pub outcome: Option<CorrectionOutcome>,
    pub roi_verdicts: Vec<Verdict>,
    pub image_verdict: Option<ImageVerdict>,
    pub error: Option<StageError>,
    #[serde(skip)]
    pub timings: StageTimings,
}

impl ImageResult {
    fn failed(stem: &str, stage: &str, message: String, timings: StageTimings) -> Self {
        Self {
            stem: stem.to_string(),
            detection_count: 0,
            outcome: None,
            roi_verdicts: Vec::new(),
            image_verdict: None,
            error: Some(StageError {
                stage: stage.to_string(),
                message,
            }),
            timings,
        }
    }
}

enum DetectorRuntime {
    Backend(Arc<dyn InferenceBackend>),
    Replay(ReplayFixture),
}

struct Runtime {
    detector: DetectorRuntime,
    classifier: Arc<dyn InferenceBackend>,
}

fn build_runtime(cfg: &PipelineConfig) -> Result<Runtime> {
    let detector = match &cfg.detector_source {
        DetectorSource::OnnxModel(path) => {
            #[cfg(feature = "onnx")]
            {
                let side = cfg.detector.input_side as usize;
                let backend = crate::backend::OnnxBackend::load(path, &[1, 3, side, side])?;
                DetectorRuntime::Backend(Arc::new(backend))
            }
            #[cfg(not(feature = "onnx"))]
            {
                return Err(Error::Config(format!(
                    "built without the `onnx` feature, cannot load {}",
                    path.display()
                )));
            }
        }
        DetectorSource::ReplayFile(path) => DetectorRuntime::Replay(ReplayFixture::load(path)?),
        DetectorSource::ReplayInline(fixture) => DetectorRuntime::Replay(fixture.clone()),
        DetectorSource::Backend(backend) => DetectorRuntime::Backend(backend.clone()),
    };
    let classifier: Arc<dyn InferenceBackend> = match &cfg.classifier_source {
        ClassifierSource::OnnxModel(path) => {
            #[cfg(feature = "onnx")]
            {
                let side = cfg.classifier.input_side as usize;
                Arc::new(crate::backend::OnnxBackend::load(path, &[1, 3, side, side])?)
            }
            #[cfg(not(feature = "onnx"))]
            {
                return Err(Error::Config(format!(
                    "built without the `onnx` feature, cannot load {}",
                    path.display()
                )));
            }
        }
        ClassifierSource::ConstLogit(logit) => Arc::new(StubBackend::const_logit(*logit)),
        ClassifierSource::Backend(backend) => backend.clone(),
    };
    Ok(Runtime {
        detector,
        classifier,
    })
}

fn process_image(row: &ManifestRow, runtime: &Runtime, cfg: &PipelineConfig) -> ImageResult {
    let mut timings = StageTimings::default();
    let start = Instant::now();

    let t = Instant::now();
    let img = match imaging::load_image(&row.path) {
        Ok(img) => img,
        Err(e) => {
            timings.decode_ms = t.elapsed().as_secs_f64() * 1e3;
            timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
            return ImageResult::failed(&row.stem, STAGE_DECODE, e.to_string(), timings);
        }
    };
    timings.decode_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let detections = match &runtime.detector {
        DetectorRuntime::Replay(fixture) => fixture.boxes_for(&row.stem),
        DetectorRuntime::Backend(backend) => {
            match detector::detect(&img, backend.as_ref(), &cfg.detector) {
                Ok(boxes) => boxes,
                Err(e) => {
                    timings.detect_ms = t.elapsed().as_secs_f64() * 1e3;
                    timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
                    return ImageResult::failed(&row.stem, STAGE_DETECT, e.to_string(), timings);
                }
            }
        }
    };
    timings.detect_ms = t.elapsed().as_secs_f64() * 1e3;

    let outcome = corrector::correct(&detections, img.width());
    log::info!(
        "{}, {}, {}, {}",
        row.stem,
        detections.len(),
        if outcome.is_excluded() { "excluded" } else { "pair" },
        match outcome.pair() {
            None => "-".to_string(),
            Some(p) => format!("{:?}", p.provenance),
        }
    );

    let mut roi_verdicts = Vec::new();
    let mut image_verdict = None;
    let mut error = None;

    if let Some(pair) = outcome.pair() {
        let t = Instant::now();
        let mut verdicts: Vec<Verdict> = Vec::with_capacity(2);
        'rois: for (i, roi_box) in pair.boxes().iter().enumerate() {
            let roi_id = format!("{}_kidney{}", row.stem, i);
            let roi = match imaging::crop(&img, roi_box) {
                Ok(roi) => roi,
                Err(e) => {
                    error = Some(StageError {
                        stage: STAGE_CLASSIFY.to_string(),
                        message: format!("{roi_id}: {e}"),
                    });
                    break 'rois;
                }
            };
            if let Some(dir) = &cfg.crop_output_dir {
                let path = dir.join(format!("{roi_id}.png"));
                if let Err(e) = imaging::save_png(&roi, &path) {
                    error = Some(StageError {
                        stage: STAGE_CLASSIFY.to_string(),
                        message: format!("{roi_id}: {e}"),
                    });
                    break 'rois;
                }
            }
            match classifier::classify(&roi, &roi_id, runtime.classifier.as_ref(), &cfg.classifier)
            {
                Ok(v) => verdicts.push(v),
                Err(e) => {
                    error = Some(StageError {
                        stage: STAGE_CLASSIFY.to_string(),
                        message: format!("{roi_id}: {e}"),
                    });
                    break 'rois;
                }
            }
        }
        timings.classify_ms = t.elapsed().as_secs_f64() * 1e3;
        if error.is_none() {
            let pair_verdicts: [Verdict; 2] = [verdicts[0].clone(), verdicts[1].clone()];
            image_verdict = Some(classifier::aggregate(&pair_verdicts));
            roi_verdicts = verdicts;
        }
    }

    timings.total_ms = start.elapsed().as_secs_f64() * 1e3;
    ImageResult {
        stem: row.stem.clone(),
        detection_count: detections.len(),
        outcome: Some(outcome),
        roi_verdicts,
        image_verdict,
        error,
        timings,
    }
}

fn run_batch_with(manifest: &Manifest, cfg: &PipelineConfig, runtime: &Runtime) -> Result<Vec<ImageResult>> {
    if let Some(dir) = &cfg.crop_output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(run_rows(manifest.rows(), cfg, runtime))
}

#[cfg(feature = "parallel")]
fn run_rows(rows: &[ManifestRow], cfg: &PipelineConfig, runtime: &Runtime) -> Vec<ImageResult> {
    use rayon::prelude::*;
    if cfg.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .expect("thread pool construction");
        // par_iter + collect preserves index order, so scheduling cannot
        // change the output
        pool.install(|| {
            rows.par_iter()
                .map(|row| process_image(row, runtime, cfg))
                .collect()
        })
    } else {
        rows.iter().map(|row| process_image(row, runtime, cfg)).collect()
    }
}

#[cfg(not(feature = "parallel"))]
fn run_rows(rows: &[ManifestRow], cfg: &PipelineConfig, runtime: &Runtime) -> Vec<ImageResult> {
    rows.iter().map(|row| process_image(row, runtime, cfg)).collect()
}

/// Runs the full pipeline over a manifest. One result per manifest row, in
/// manifest order. Configuration problems abort before any work; per-image
/// failures are recorded in the results.
pub fn run_pipeline(manifest: &Manifest, cfg: &PipelineConfig) -> Result<Vec<ImageResult>> {
    cfg.validate()?;
    let runtime = build_runtime(cfg)?;
    run_batch_with(manifest, cfg, &runtime)
}

/// Serializes results as JSON Lines, one record per image.
pub fn results_to_jsonl(results: &[ImageResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r).expect("result serialization"));
        out.push('\n');
    }
    out
}

/// Parses a JSON Lines results file.
pub fn results_from_jsonl(text: &str) -> Result<Vec<ImageResult>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Config(format!("bad result line: {e}"))))
        .collect()
}

/// Latency summary for one stage: mean/median/p95 over all samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub samples: usize,
}

impl StatSummary {
    fn from_samples(mut v: Vec<f64>) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        };
        let p95 = v[((0.95 * n as f64).ceil() as usize).max(1) - 1];
        Some(Self {
            mean_ms: mean,
            median_ms: median,
            p95_ms: p95,
            samples: n,
        })
    }
}

/// Per-stage and end-to-end latency report from repeated pipeline runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub images: usize,
    pub warmup_excluded: bool,
    /// Keyed by stage name; `end_to_end` is the per-image total.
    pub stages: BTreeMap<String, StatSummary>,
}

/// Runs the pipeline `repetitions` times and aggregates per-stage wall
/// clock. The first repetition is excluded as warm-up when `repetitions`
/// is at least 3.
pub fn bench(manifest: &Manifest, cfg: &PipelineConfig, repetitions: usize) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be >= 1".into()));
    }
    cfg.validate()?;
    let runtime = build_runtime(cfg)?;
    let warmup_excluded = repetitions >= 3;
    let mut decode = Vec::new();
    let mut detect = Vec::new();
    let mut classify = Vec::new();
    let mut total = Vec::new();
    for rep in 0..repetitions {
        let results = run_batch_with(manifest, cfg, &runtime)?;
        if warmup_excluded && rep == 0 {
            continue;
        }
        for r in &results {
            decode.push(r.timings.decode_ms);
            detect.push(r.timings.detect_ms);
            classify.push(r.timings.classify_ms);
            total.push(r.timings.total_ms);
        }
    }
    let mut stages = BTreeMap::new();
    for (name, samples) in [
        (STAGE_DECODE, decode),
        (STAGE_DETECT, detect),
        (STAGE_CLASSIFY, classify),
        ("end_to_end", total),
    ] {
        if let Some(s) = StatSummary::from_samples(samples) {
            stages.insert(name.to_string(), s);
        }
    }
    Ok(BenchReport {
        repetitions,
        images: manifest.len(),
        warmup_excluded,
        stages,
    })
}

//! CPU-first batch inference pipeline and evaluation harness for
//! kidney-stone detection on coronal CT images.
//!
//! The workflow: detect kidneys on a CT slice, correct the detection set to
//! exactly two regions of interest (mirroring a lone detection across the
//! vertical midline, truncating three-detection cases to the two most
//! confident), crop the ROIs, run a binary stone/normal classifier on each
//! crop, and aggregate per-crop verdicts into metrics and latency reports.
//!
//! Modules follow the pipeline stages:
//! - [`imaging`]: pixel and geometry primitives (decode, letterbox, crop,
//!   mirror, normalize)
//! - [`backend`]: pluggable inference backends (ONNX, replay fixture, stub)
//! - [`detector`]: YOLO-style output decoding, confidence filtering, NMS
//! - [`corrector`]: the two-ROI correction rules
//! - [`classifier`]: sigmoid-head binary classification of a single ROI
//! - [`pipeline`]: batch orchestration with per-stage timing
//! - [`eval`]: confusion matrices, derived metrics, detection histograms
//! - [`dataprep`]: manifest construction, split leakage checks, offline
//!   augmentation

pub mod backend;
pub mod classifier;
pub mod config;
pub mod corrector;
pub mod dataprep;
pub mod detector;
pub mod error;
pub mod eval;
pub mod imaging;
pub mod pipeline;

pub use error::{Error, Result};

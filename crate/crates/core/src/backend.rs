//! Pluggable inference backends.
//!
//! A backend maps an f32 input tensor to an f32 output tensor and must be
//! deterministic: identical input bytes produce identical output. Three
//! implementations exist: an ONNX model executor (feature `onnx`), a replay
//! fixture that substitutes recorded detections for live inference, and a
//! fixed-output stub for tests and benchmarks.

use std::collections::HashMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::BoxXYXY;

/// Deterministic tensor-in, tensor-out inference.
pub trait InferenceBackend: Send + Sync {
    /// Runs the model on `input` with the given NCHW shape, returning the
    /// raw output values and their declared shape.
    fn run(&self, input: &[f32], shape: &[usize]) -> Result<(Vec<f32>, Vec<usize>)>;
}

/// Fixed-output backend for tests and benchmarks. Optionally sleeps before
/// returning, to give timing code a known stage latency.
#[derive(Debug, Clone)]
pub struct StubBackend {
    output: Vec<f32>,
    shape: Vec<usize>,
    delay: Option<Duration>,
}

impl StubBackend {
    pub fn new(output: Vec<f32>, shape: Vec<usize>) -> Self {
        Self {
            output,
            shape,
            delay: None,
        }
    }

    /// A classifier stub emitting a single constant logit.
    pub fn const_logit(logit: f32) -> Self {
        Self::new(vec![logit], vec![1, 1])
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }
}

impl InferenceBackend for StubBackend {
    fn run(&self, _input: &[f32], _shape: &[usize]) -> Result<(Vec<f32>, Vec<usize>)> {
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        Ok((self.output.clone(), self.shape.clone()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ReplayRecord {
    image: String,
    boxes: Vec<[f32; 5]>,
}

/// Recorded per-image detections keyed by image stem, read from a JSON
/// Lines file: `{"image": "<stem>", "boxes": [[x1,y1,x2,y2,conf], ...]}`.
/// Coordinates are in source-image space, bypassing the letterbox math.
#[derive(Debug, Clone, Default)]
pub struct ReplayFixture {
    map: HashMap<String, Vec<BoxXYXY>>,
}

impl ReplayFixture {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut map = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(line).map_err(|e| {
                Error::Config(format!("{}:{}: bad replay record: {e}", path.display(), lineno + 1))
            })?;
            let boxes = rec
                .boxes
                .iter()
                .map(|b| BoxXYXY::new(b[0], b[1], b[2], b[3], b[4]))
                .collect();
            map.insert(rec.image, boxes);
        }
        Ok(Self { map })
    }

    pub fn insert(&mut self, stem: &str, boxes: Vec<BoxXYXY>) {
        self.map.insert(stem.to_string(), boxes);
    }

    /// Recorded boxes for a stem, sorted by descending confidence (ties by
    /// smaller x1, then y1, matching the detector contract). An unknown
    /// stem replays as zero detections.
    pub fn boxes_for(&self, stem: &str) -> Vec<BoxXYXY> {
        let mut boxes = self.map.get(stem).cloned().unwrap_or_default();
        boxes.sort_by(|a, b| {
            b.confidence
                .partial_cmp(&a.confidence)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.x1.partial_cmp(&b.x1).unwrap_or(std::cmp::Ordering::Equal))
                .then(a.y1.partial_cmp(&b.y1).unwrap_or(std::cmp::Ordering::Equal))
        });
        boxes
    }

    pub fn contains(&self, stem: &str) -> bool {
        self.map.contains_key(stem)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[cfg(feature = "onnx")]
pub use onnx::OnnxBackend;

#[cfg(feature = "onnx")]
mod onnx {
    use super::*;
    use tract_onnx::prelude::*;

    /// Executes an exported ONNX model on the CPU via tract.
    pub struct OnnxBackend {
        plan: TypedRunnableModel<TypedModel>,
    }

    impl OnnxBackend {
        /// Loads a model and pins its single input to `input_shape`.
        pub fn load(path: &Path, input_shape: &[usize]) -> Result<Self> {
            let plan = tract_onnx::onnx()
                .model_for_path(path)
                .and_then(|m| {
                    m.with_input_fact(0, f32::fact(input_shape).into())
                })
                .and_then(|m| m.into_optimized())
                .and_then(|m| m.into_runnable())
                .map_err(|e| Error::Backend(format!("{}: {e}", path.display())))?;
            Ok(Self { plan })
        }
    }

    impl InferenceBackend for OnnxBackend {
        fn run(&self, input: &[f32], shape: &[usize]) -> Result<(Vec<f32>, Vec<usize>)> {
            let tensor = Tensor::from_shape(shape, input)
                .map_err(|e| Error::Backend(e.to_string()))?;
            let outputs = self
                .plan
                .run(tvec!(tensor.into()))
                .map_err(|e| Error::Backend(e.to_string()))?;
            let out = outputs
                .first()
                .ok_or_else(|| Error::Backend("model produced no outputs".into()))?;
            let out_shape = out.shape().to_vec();
            let values = out
                .to_array_view::<f32>()
                .map_err(|e| Error::Backend(e.to_string()))?
                .iter()
                .copied()
                .collect();
            Ok((values, out_shape))
        }
    }
}

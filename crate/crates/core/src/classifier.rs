//! Binary stone/normal classification of a single kidney ROI through a
//! sigmoid-head model, plus image-level aggregation of the two per-ROI
//! verdicts.

use serde::{Deserialize, Serialize};

use crate::backend::InferenceBackend;
use crate::error::{Error, Result};
use crate::imaging::{self, ImageBuffer};

/// Logistic sigmoid.
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub input_side: u32,
    pub threshold: f32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
    /// When the exported model already ends in a sigmoid, its output is a
    /// probability and no second sigmoid is applied.
    pub output_is_probability: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            input_side: 224,
            threshold: 0.5,
            mean: imaging::NORM_MEAN,
            std: imaging::NORM_STD,
            output_is_probability: false,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!(
                "classifier threshold must be in (0,1), got {}",
                self.threshold
            )));
        }
        if self.input_side == 0 {
            return Err(Error::Config("classifier input_side must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-ROI classification result. The decision boundary is assigned to
/// positive: `positive == (score >= threshold)`, so a tie never suppresses
/// a stone alarm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub roi_id: String,
    pub score: f32,
    pub positive: bool,
}

/// Image-level aggregate of the two ROI verdicts: positive iff any ROI is
/// positive, score is the max ROI score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageVerdict {
    pub score: f32,
    pub positive: bool,
}

/// Runs the classifier on one ROI: normalize, forward pass, sigmoid (unless
/// the model outputs a probability), threshold.
pub fn classify(
    roi: &ImageBuffer,
    roi_id: &str,
    backend: &dyn InferenceBackend,
    cfg: &ClassifierConfig,
) -> Result<Verdict> {
    cfg.validate()?;
    let tensor = imaging::normalize_with(roi, cfg.input_side, cfg.mean, cfg.std);
    let (out, shape) = backend.run(&tensor.data, &tensor.nchw_shape())?;
    if out.len() != 1 || shape.iter().product::<usize>() != 1 {
        return Err(Error::ShapeMismatch {
            expected: "single scalar".into(),
            got: shape,
        });
    }
    let score = if cfg.output_is_probability {
        out[0]
    } else {
        sigmoid(out[0])
    };
    Ok(Verdict {
        roi_id: roi_id.to_string(),
        score,
        positive: score >= cfg.threshold,
    })
}

/// Any-positive aggregation of the two per-ROI verdicts.
pub fn aggregate(verdicts: &[Verdict; 2]) -> ImageVerdict {
    ImageVerdict {
        score: verdicts[0].score.max(verdicts[1].score),
        positive: verdicts[0].positive || verdicts[1].positive,
    }
}

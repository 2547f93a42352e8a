use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, XaiError};
use crate::gradcam::GradCamResult;
use crate::guided::GuidedBackpropResult;
use crate::lime::LimeExplanation;
use crate::segmentation::{Baseline, Segmentation};
use crate::shap::ShapleyAttribution;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lime,
    Shap,
    Gradcam,
    Guided,
}

impl Method {
    /// Grid column order after the original image.
    pub const ALL: [Method; 4] = [Method::Lime, Method::Shap, Method::Gradcam, Method::Guided];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lime => "lime",
            Method::Shap => "shap",
            Method::Gradcam => "gradcam",
            Method::Guided => "guided",
        }
    }

    pub fn needs_gradients(self) -> bool {
        matches!(self, Method::Gradcam | Method::Guided)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = XaiError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                XaiError::Argument(format!(
                    "unknown method '{s}' (expected lime, shap, gradcam or guided)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Superpixel {
        scores: Vec<f64>,
        segmentation: Segmentation,
    },
    /// `[H, W]` map already in `[0, 1]`.
    PixelMap(Tensor),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    /// Largest value before normalization (pixel maps) or largest signed
    /// score (superpixels).
    pub max_before: f64,
    pub baseline: Option<Baseline>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub method: Method,
    pub class_index: usize,
    pub payload: Payload,
    pub normalization: Normalization,
}

impl Attribution {
    pub fn superpixel(
        method: Method,
        class_index: usize,
        scores: Vec<f64>,
        segmentation: Segmentation,
        baseline: Baseline,
    ) -> Result<Self> {
        if scores.len() != segmentation.region_count() {
            return Err(XaiError::Argument(format!(
                "{} scores for {} superpixels",
                scores.len(),
                segmentation.region_count()
            )));
        }
        let max_before = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Attribution {
            method,
            class_index,
            payload: Payload::Superpixel {
                scores,
                segmentation,
            },
            normalization: Normalization {
                max_before,
                baseline: Some(baseline),
            },
        })
    }

    pub fn pixel_map(
        method: Method,
        class_index: usize,
        map: Tensor,
        max_before: f64,
    ) -> Result<Self> {
        if map.rank() != 2 || map.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(XaiError::Argument(format!(
                "pixel map must be 2-D with values in [0, 1], shape {:?}",
                map.shape()
            )));
        }
        Ok(Attribution {
            method,
            class_index,
            payload: Payload::PixelMap(map),
            normalization: Normalization {
                max_before,
                baseline: None,
            },
        })
    }

    pub fn from_lime(
        exp: &LimeExplanation,
        seg: &Segmentation,
        class_index: usize,
    ) -> Result<Self> {
        Self::superpixel(
            Method::Lime,
            class_index,
            exp.coefficients.clone(),
            seg.clone(),
            exp.config.baseline,
        )
    }

    pub fn from_shap(
        shap: &ShapleyAttribution,
        seg: &Segmentation,
        class_index: usize,
        baseline: Baseline,
    ) -> Result<Self> {
        Self::superpixel(
            Method::Shap,
            class_index,
            shap.phi.clone(),
            seg.clone(),
            baseline,
        )
    }

    pub fn from_gradcam(r: &GradCamResult) -> Result<Self> {
        Self::pixel_map(
            Method::Gradcam,
            r.class_index,
            r.normalized.clone(),
            r.raw_max,
        )
    }

    pub fn from_guided(r: &GuidedBackpropResult) -> Result<Self> {
        Self::pixel_map(Method::Guided, r.class_index, r.map.clone(), r.map_max)
    }

    pub fn height(&self) -> usize {
        match &self.payload {
            Payload::Superpixel { segmentation, .. } => segmentation.height(),
            Payload::PixelMap(m) => m.shape()[0],
        }
    }

    pub fn width(&self) -> usize {
        match &self.payload {
            Payload::Superpixel { segmentation, .. } => segmentation.width(),
            Payload::PixelMap(m) => m.shape()[1],
        }
    }

    /// Per-pixel signed scores in row-major order; superpixel scores are
    /// splatted onto their regions.
    pub fn pixel_scores(&self) -> Vec<f64> {
        match &self.payload {
            Payload::Superpixel {
                scores,
                segmentation,
            } => segmentation
                .labels()
                .iter()
                .map(|&l| scores[l as usize])
                .collect(),
            Payload::PixelMap(m) => m.data().to_vec(),
        }
    }

    /// Values in `[0, 1]` for display. Superpixel scores are min-max
    /// normalized over the image; a constant score maps to 0.5.
    pub fn display_map(&self) -> Vec<f64> {
        match &self.payload {
            Payload::Superpixel { .. } => {
                let px = self.pixel_scores();
                let lo = px.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                if hi > lo {
                    px.iter().map(|v| (v - lo) / (hi - lo)).collect()
                } else {
                    vec![0.5; px.len()]
                }
            }
            Payload::PixelMap(m) => m.data().to_vec(),
        }
    }
}

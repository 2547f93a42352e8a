//! Feature attribution for a small image classifier.
//!
//! `xaiscope` bundles four explainers behind one model interface:
//!
//! * [`lime`]: a weighted linear surrogate fitted over superpixel masks;
//! * [`shap`]: Shapley values over superpixel coalitions, exact or sampled;
//! * [`gradcam`]: gradient-weighted class activation maps;
//! * [`guided`]: guided backpropagation to the input.
//!
//! The model they explain is a toy CNN trained on synthetic shapes
//! ([`model`]), differentiated by a small tape-based engine ([`autodiff`]).
//! [`oracles`] holds slow reference implementations that the tests compare
//! against, and [`report`] renders overlays, comparison grids, a deletion
//! metric and a JSON report.
//!
//! ```
//! use xaiscope::model::{build_toycnn, gen_shapes_dataset};
//! use xaiscope::gradcam::gradcam_heatmap;
//!
//! let model = build_toycnn(1);
//! let sample = &gen_shapes_dataset(1, 2)?[0];
//! let cam = gradcam_heatmap(&model, &sample.image, 0, "relu2")?;
//! assert_eq!(cam.normalized.shape(), &[64, 64]);
//! # Ok::<(), xaiscope::XaiError>(())
//! ```

// NaN must fail range checks, so `!(x > 0.0)` is intended; index loops
// mirror the linear algebra they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod autodiff;
pub mod error;
pub mod gradcam;
pub mod guided;
pub mod image;
pub mod lime;
pub mod model;
pub mod oracles;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod segmentation;
pub mod shap;
pub mod tensor;
pub mod verify;

pub use error::{Result, XaiError};
pub use image::ImageU8;
pub use model::{ModelHandle, ToyConvNet};
pub use rng::SplitMix64;
pub use segmentation::{Baseline, CoalitionMask, Segmentation};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
    #[doc = include_str!("../../../book/src/superpixel.md")]
    struct Superpixel;
    #[doc = include_str!("../../../book/src/gradients.md")]
    struct Gradients;
    #[doc = include_str!("../../../book/src/reports.md")]
    struct Reports;
    #[doc = include_str!("../../../book/src/oracles.md")]
    struct Oracles;
}

//! Minimal reverse-mode differentiation over a chain of layers.
//!
//! A [`ComputationTape`] records each layer application during the forward
//! pass; [`backward`] replays it in reverse. Two details matter for the
//! explainers built on top:
//!
//! * taps keep an intermediate activation together with its gradient, which
//!   is what Grad-CAM pools into channel weights;
//! * the ReLU backward rule is pluggable through [`ReluPolicy`]. The guided
//!   rule passes gradient only where the forward input and the incoming
//!   gradient are both positive. That joint mask is the usual reading of
//!   guided backpropagation; a literal product of two separately rectified
//!   factors is not what is implemented.

mod layer;
mod tape;

pub use layer::{relu_backward, softmax, Affine, Conv2d, Layer, ReluPolicy};
pub use tape::{
    backward, backward_from, forward, BackwardOptions, ComputationTape, Gradients, Network,
    ParamGrad,
};

use crate::error::{Result, XaiError};
use crate::oracles::{finite_diff, OracleBudget};
use crate::tensor::Tensor;

/// Compares an analytic gradient against central differences.
///
/// `f` returns the scalar value and its analytic gradient at a point. The
/// result is the largest `|analytic - numeric| / max(1, |analytic|)` over all
/// coordinates.
pub fn grad_check<F>(f: F, point: &Tensor, epsilon: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<(f64, Vec<f64>)>,
{
    if !(epsilon > 0.0) {
        return Err(XaiError::Argument(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let (_, analytic) = f(point)?;
    if analytic.len() != point.len() {
        return Err(XaiError::dim(
            "grad_check",
            format!(
                "gradient has {} entries, point has {}",
                analytic.len(),
                point.len()
            ),
        ));
    }
    let budget = OracleBudget {
        max_fd_coordinates: point.len(),
        ..OracleBudget::default()
    };
    let numeric = finite_diff(|x| f(x).map(|(v, _)| v), point, epsilon, &budget)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}

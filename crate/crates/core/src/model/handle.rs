use crate::error::Result;
use crate::image::ImageU8;

use super::toycnn::{Prediction, ToyConvNet};

/// Black-box access to a classifier.
///
/// The perturbation explainers only call [`predict`](Self::predict). The
/// gradient explainers additionally need [`differentiable`](Self::differentiable)
/// to expose the underlying network; opaque models return `None`.
pub trait ModelHandle {
    fn predict(&self, image: &ImageU8) -> Result<Prediction>;

    fn class_count(&self) -> usize;

    fn differentiable(&self) -> Option<&ToyConvNet> {
        None
    }
}

impl ModelHandle for ToyConvNet {
    fn predict(&self, image: &ImageU8) -> Result<Prediction> {
        ToyConvNet::predict(self, image)
    }

    fn class_count(&self) -> usize {
        self.arch().classes
    }

    fn differentiable(&self) -> Option<&ToyConvNet> {
        Some(self)
    }
}

/// Wraps any prediction function; never gradient-capable.
pub struct OpaqueModel<F> {
    predict: F,
    classes: usize,
}

impl<F> OpaqueModel<F>
where
    F: Fn(&ImageU8) -> Result<Prediction>,
{
    pub fn new(classes: usize, predict: F) -> Self {
        OpaqueModel { predict, classes }
    }
}

impl<F> ModelHandle for OpaqueModel<F>
where
    F: Fn(&ImageU8) -> Result<Prediction>,
{
    fn predict(&self, image: &ImageU8) -> Result<Prediction> {
        (self.predict)(image)
    }

    fn class_count(&self) -> usize {
        self.classes
    }
}

/// Hides the gradients of a [`ToyConvNet`], leaving only `predict`.
pub struct Opaque<'a>(pub &'a ToyConvNet);

impl ModelHandle for Opaque<'_> {
    fn predict(&self, image: &ImageU8) -> Result<Prediction> {
        self.0.predict(image)
    }

    fn class_count(&self) -> usize {
        self.0.arch().classes
    }
}

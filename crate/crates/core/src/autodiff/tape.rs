use std::collections::{BTreeMap, BTreeSet};

use super::layer::{
    affine_backward, conv2d_backward, forward_kernel, maxpool2_backward, relu_backward,
    softmax_backward, Layer, ReluPolicy,
};
use crate::error::{Result, XaiError};
use crate::tensor::Tensor;

/// One recorded layer application. Record `i` consumes value `i` and
/// produces value `i + 1` of the tape.
#[derive(Debug)]
struct Record<'a> {
    layer: &'a Layer,
    argmax: Vec<usize>,
}

/// Chain-structured record of a forward pass.
///
/// Value 0 is the tape input; record `i` maps value `i` to value `i + 1`.
/// Layers listed in the tap set keep their output activation and its
/// gradient in the [`Gradients`] returned by [`backward`].
#[derive(Debug, Default)]
pub struct ComputationTape<'a> {
    records: Vec<Record<'a>>,
    values: Vec<Tensor>,
    taps: BTreeSet<usize>,
}

impl<'a> ComputationTape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_taps(taps: impl IntoIterator<Item = usize>) -> Self {
        ComputationTape {
            taps: taps.into_iter().collect(),
            ..Self::default()
        }
    }

    /// Retain the output of record `layer` and its gradient.
    pub fn tap(&mut self, layer: usize) {
        self.taps.insert(layer);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Output of record `layer`.
    pub fn activation(&self, layer: usize) -> Option<&Tensor> {
        self.values.get(layer + 1)
    }

    pub fn output(&self) -> Option<&Tensor> {
        if self.records.is_empty() {
            None
        } else {
            self.values.last()
        }
    }

    pub fn input(&self) -> Option<&Tensor> {
        self.values.first()
    }
}

/// Applies `layer` to `input` and records the step on `tape`.
///
/// The tape is a chain: after the first call, `input` must be the previous
/// output.
pub fn forward<'a>(
    layer: &'a Layer,
    input: &Tensor,
    tape: &mut ComputationTape<'a>,
) -> Result<Tensor> {
    let index = tape.records.len();
    let name = format!("layer {index} ({})", layer.kind());
    if !input.is_finite() {
        return Err(XaiError::Numeric(format!("non-finite input to {name}")));
    }
    match tape.values.last() {
        None => tape.values.push(input.clone()),
        Some(prev) if prev.shape() == input.shape() && prev.data() == input.data() => {}
        Some(_) => {
            return Err(XaiError::State(format!(
                "{name}: input is not the previous tape output"
            )))
        }
    }
    let fwd = forward_kernel(layer, input, &name)?;
    tape.records.push(Record {
        layer,
        argmax: fwd.argmax,
    });
    tape.values.push(fwd.output.clone());
    Ok(fwd.output)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Per record; `Some` for conv2d and affine layers when parameter
    /// gradients were requested.
    pub params: Vec<Option<ParamGrad>>,
    /// Tape input with its gradient attached (absent when not requested).
    pub input: Option<Tensor>,
    /// Tapped activations, keyed by record index, each with its gradient.
    pub taps: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn input_grad(&self) -> Option<&[f64]> {
        self.input.as_ref().and_then(|t| t.grad())
    }

    pub fn tap(&self, layer: usize) -> Option<&Tensor> {
        self.taps.get(&layer)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BackwardOptions {
    pub policy: ReluPolicy,
    pub param_grads: bool,
    pub input_grad: bool,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        BackwardOptions {
            policy: ReluPolicy::Standard,
            param_grads: true,
            input_grad: true,
        }
    }
}

impl From<ReluPolicy> for BackwardOptions {
    fn from(policy: ReluPolicy) -> Self {
        BackwardOptions {
            policy,
            ..Default::default()
        }
    }
}

/// Differentiates component `seed` of the tape's final output.
pub fn backward(tape: &ComputationTape<'_>, seed: usize, policy: ReluPolicy) -> Result<Gradients> {
    let out = tape
        .output()
        .ok_or_else(|| XaiError::State("backward called before forward".into()))?;
    if seed >= out.len() {
        return Err(XaiError::Index {
            index: seed,
            len: out.len(),
        });
    }
    let mut upstream = vec![0.0; out.len()];
    upstream[seed] = 1.0;
    backward_from(tape, upstream, policy.into())
}

/// Vector-Jacobian product of the whole tape with `upstream`, the gradient
/// of some scalar with respect to the final output.
pub fn backward_from(
    tape: &ComputationTape<'_>,
    upstream: Vec<f64>,
    options: BackwardOptions,
) -> Result<Gradients> {
    let out = tape
        .output()
        .ok_or_else(|| XaiError::State("backward called before forward".into()))?;
    if upstream.len() != out.len() {
        return Err(XaiError::dim(
            "backward seed",
            format!(
                "upstream has {} values, output has {}",
                upstream.len(),
                out.len()
            ),
        ));
    }
    let mut params = vec![None; tape.records.len()];
    let mut taps = BTreeMap::new();
    let mut grad = upstream;
    for (i, record) in tape.records.iter().enumerate().rev() {
        if tape.taps.contains(&i) {
            taps.insert(i, tape.values[i + 1].clone().with_grad(grad.clone())?);
        }
        let input = &tape.values[i];
        let need_input = i > 0 || options.input_grad;
        grad = match record.layer {
            Layer::Conv2d(conv) => {
                let (gx, gw, gb) = conv2d_backward(conv, input, &grad, need_input);
                if options.param_grads {
                    params[i] = Some(ParamGrad {
                        weight: Tensor::new(conv.weight.shape().to_vec(), gw)?,
                        bias: Tensor::from_vec(gb),
                    });
                }
                gx.unwrap_or_default()
            }
            Layer::Affine(affine) => {
                let (gx, gw, gb) = affine_backward(affine, input, &grad, need_input);
                if options.param_grads {
                    params[i] = Some(ParamGrad {
                        weight: Tensor::new(affine.weight.shape().to_vec(), gw)?,
                        bias: Tensor::from_vec(gb),
                    });
                }
                gx.unwrap_or_default()
            }
            Layer::Relu => relu_backward(input.data(), &grad, options.policy),
            Layer::MaxPool2 => maxpool2_backward(input.len(), &record.argmax, &grad),
            Layer::Softmax => softmax_backward(tape.values[i + 1].data(), &grad),
        };
    }
    let input = if options.input_grad {
        Some(tape.values[0].clone().with_grad(grad)?)
    } else {
        None
    };
    Ok(Gradients {
        params,
        input,
        taps,
    })
}

/// A sequential stack of named layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    names: Vec<String>,
}

impl Network {
    pub fn new(layers: Vec<(String, Layer)>) -> Self {
        let (names, layers) = layers.into_iter().unzip();
        Network { layers, names }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// Forward pass without recording.
    pub fn eval(&self, input: &Tensor) -> Result<Tensor> {
        self.eval_from(0, input.clone())
    }

    /// Runs layers `start..` on `value`, which stands in for the output of
    /// layer `start - 1`.
    pub fn eval_from(&self, start: usize, mut value: Tensor) -> Result<Tensor> {
        for (i, layer) in self.layers.iter().enumerate().skip(start) {
            let name = format!("{} ({})", self.names[i], layer.kind());
            if !value.is_finite() {
                return Err(XaiError::Numeric(format!("non-finite input to {name}")));
            }
            value = forward_kernel(layer, &value, &name)?.output;
        }
        Ok(value)
    }

    /// Forward pass on a fresh tape with the given taps.
    pub fn record(
        &self,
        input: &Tensor,
        taps: impl IntoIterator<Item = usize>,
    ) -> Result<ComputationTape<'_>> {
        let mut tape = ComputationTape::with_taps(taps);
        let mut value = input.clone();
        for layer in &self.layers {
            value = forward(layer, &value, &mut tape)?;
        }
        Ok(tape)
    }
}

use super::dataset::Sample;
use super::toycnn::ToyConvNet;
use crate::autodiff::{backward_from, softmax, BackwardOptions, Layer};
use crate::error::{Result, XaiError};
use crate::rng::SplitMix64;

/// Plain SGD on cross-entropy with batch size 1.
///
/// Epoch `e` (0-based) visits the samples in the order of a Fisher–Yates
/// shuffle driven by `SplitMix64(seed + e)`. Returns the trained copy and
/// the mean loss of every epoch.
pub fn train(
    model: &ToyConvNet,
    data: &[Sample],
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<(ToyConvNet, Vec<f64>)> {
    if data.is_empty() {
        return Err(XaiError::Argument("training set is empty".into()));
    }
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(XaiError::Argument(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    let classes = model.arch().classes;
    let mut model = model.clone();
    let mut losses = Vec::with_capacity(epochs);
    let options = BackwardOptions {
        input_grad: false,
        ..BackwardOptions::default()
    };
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        SplitMix64::new(seed.wrapping_add(epoch as u64)).shuffle(&mut order);
        let mut total = 0.0;
        for &i in &order {
            let sample = &data[i];
            if sample.label >= classes {
                return Err(XaiError::Index {
                    index: sample.label,
                    len: classes,
                });
            }
            let input = model.input_tensor(&sample.image)?;
            let grads = {
                let tape = model.network().record(&input, []).map_err(|e| match e {
                    XaiError::Numeric(_) => XaiError::TrainingDiverged { epoch, lr },
                    e => e,
                })?;
                let logits = tape.output().expect("non-empty network").data().to_vec();
                let mut upstream = softmax(&logits);
                let loss = -upstream[sample.label].ln();
                if !loss.is_finite() {
                    return Err(XaiError::TrainingDiverged { epoch, lr });
                }
                total += loss;
                upstream[sample.label] -= 1.0;
                backward_from(&tape, upstream, options)?
            };
            for (layer, grad) in model
                .network_mut()
                .layers_mut()
                .iter_mut()
                .zip(&grads.params)
            {
                let Some(grad) = grad else { continue };
                let (w, b) = match layer {
                    Layer::Conv2d(c) => (&mut c.weight, &mut c.bias),
                    Layer::Affine(a) => (&mut a.weight, &mut a.bias),
                    _ => continue,
                };
                sgd_step(w.data_mut(), grad.weight.data(), lr);
                sgd_step(b.data_mut(), grad.bias.data(), lr);
            }
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(XaiError::TrainingDiverged { epoch, lr });
        }
        losses.push(mean);
    }
    Ok((model, losses))
}

fn sgd_step(params: &mut [f64], grads: &[f64], lr: f64) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
}

/// Fraction of samples whose predicted class equals the label.
pub fn accuracy(model: &ToyConvNet, data: &[Sample]) -> Result<f64> {
    if data.is_empty() {
        return Err(XaiError::Argument("accuracy of an empty set".into()));
    }
    let mut correct = 0usize;
    for s in data {
        if model.predict(&s.image)?.argmax() == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

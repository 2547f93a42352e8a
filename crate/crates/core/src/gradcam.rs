//! Class activation maps from the gradient of a class logit.
//!
//! Each channel `k` of the tapped activation gets a weight
//! `α_k = mean_ij ∂y_c/∂A^k_ij`; the heatmap is `ReLU(Σ_k α_k A^k)`,
//! upsampled to input resolution and divided by its maximum.

use crate::autodiff::{backward, Network, ReluPolicy};
use crate::error::{Result, XaiError};
use crate::image::ImageU8;
use crate::model::ModelHandle;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCamResult {
    /// `ReLU(Σ α_k A^k)` at tap resolution, shape `[h, w]`.
    pub raw: Tensor,
    /// Upsampled and max-normalized, shape `[H, W]`.
    pub normalized: Tensor,
    pub alphas: Vec<f64>,
    /// Largest raw value before normalization.
    pub raw_max: f64,
    pub tap_layer: usize,
    pub tap_name: String,
    pub class_index: usize,
}

/// Grad-CAM for `class_index` at the layer named (or numbered) `tap`.
pub fn gradcam_heatmap(
    model: &dyn ModelHandle,
    image: &ImageU8,
    class_index: usize,
    tap: &str,
) -> Result<GradCamResult> {
    let net = model.differentiable().ok_or_else(|| {
        XaiError::Capability(
            "Grad-CAM needs gradients, which this model does not expose; use LIME or SHAP".into(),
        )
    })?;
    let tap_layer = net.layer_index(tap)?;
    let input = net.input_tensor(image)?;
    gradcam_from_network(
        net.network(),
        &input,
        class_index,
        tap_layer,
        image.height(),
        image.width(),
    )
}

/// Grad-CAM over any network whose output is a logit vector and whose layer
/// `tap_layer` emits a `C × h × w` activation.
pub fn gradcam_from_network(
    net: &Network,
    input: &Tensor,
    class_index: usize,
    tap_layer: usize,
    out_h: usize,
    out_w: usize,
) -> Result<GradCamResult> {
    if tap_layer >= net.layers().len() {
        return Err(XaiError::Index {
            index: tap_layer,
            len: net.layers().len(),
        });
    }
    let tape = net.record(input, [tap_layer])?;
    let grads = backward(&tape, class_index, ReluPolicy::Standard)?;
    let tapped = grads
        .tap(tap_layer)
        .ok_or_else(|| XaiError::State(format!("tap {tap_layer} was not retained")))?;
    let (c, h, w) = match *tapped.shape() {
        [c, h, w] => (c, h, w),
        ref s => {
            return Err(XaiError::Argument(format!(
                "Grad-CAM tap '{}' must be a convolutional activation, got shape {s:?}",
                net.names()[tap_layer]
            )))
        }
    };
    let z = (h * w) as f64;
    let a = tapped.data();
    let g = tapped.grad().unwrap_or_default();
    let alphas: Vec<f64> = (0..c)
        .map(|k| g[k * h * w..(k + 1) * h * w].iter().sum::<f64>() / z)
        .collect();

    let mut raw = vec![0.0; h * w];
    for (k, &alpha) in alphas.iter().enumerate() {
        for (r, &v) in raw.iter_mut().zip(&a[k * h * w..(k + 1) * h * w]) {
            *r += alpha * v;
        }
    }
    raw.iter_mut().for_each(|v| *v = v.max(0.0));
    let raw = Tensor::new(vec![h, w], raw)?;
    let raw_max = raw.max();
    let mut up = upsample_bilinear(&raw, out_h, out_w)?;
    if raw_max > 0.0 {
        up.data_mut()
            .iter_mut()
            .for_each(|v| *v = (*v / raw_max).clamp(0.0, 1.0));
    } else {
        up.data_mut().fill(0.0);
    }
    Ok(GradCamResult {
        raw,
        normalized: up,
        alphas,
        raw_max,
        tap_layer,
        tap_name: net.names()[tap_layer].clone(),
        class_index,
    })
}

/// Bilinear resize of an `[h, w]` grid with half-pixel centres and clamped
/// borders.
pub fn upsample_bilinear(map: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = match *map.shape() {
        [h, w] if h > 0 && w > 0 => (h, w),
        ref s => {
            return Err(XaiError::Argument(format!(
                "expected a non-empty 2-D map, got {s:?}"
            )))
        }
    };
    if out_h == 0 || out_w == 0 {
        return Err(XaiError::Argument(format!(
            "output size {out_h}×{out_w} must be non-zero"
        )));
    }
    let taps = |out: usize, len: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|d| {
                let src =
                    ((d as f64 + 0.5) * len as f64 / out as f64 - 0.5).clamp(0.0, (len - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let m = map.data();
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = m[y0 * w + x0] * (1.0 - fx) + m[y0 * w + x1] * fx;
            let bottom = m[y1 * w + x0] * (1.0 - fx) + m[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Tensor::new(vec![out_h, out_w], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Affine, Layer};
    use crate::model::{build_toycnn, gen_shapes_dataset, Opaque};
    use crate::rng::SplitMix64;

    fn map(h: usize, w: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![h, w], v.to_vec()).unwrap()
    }

    /// ReLU tapped at index 0, then a one-row affine head with the given
    /// per-channel coefficients.
    fn probe(channels: &[f64], h: usize, w: usize) -> Network {
        let weights: Vec<f64> = channels
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, h * w))
            .collect();
        let head = Affine::new(
            Tensor::new(vec![1, weights.len()], weights).unwrap(),
            Tensor::zeros(vec![1]),
        )
        .unwrap();
        Network::new(vec![
            ("act".into(), Layer::Relu),
            ("head".into(), Layer::Affine(head)),
        ])
    }

    fn random_input(c: usize, h: usize, w: usize, seed: u64, lo: f64) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        Tensor::new(
            vec![c, h, w],
            (0..c * h * w).map(|_| lo + rng.next_f64()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn unit_gradient_head() {
        let input = random_input(1, 4, 5, 1, -0.5);
        let r = gradcam_from_network(&probe(&[1.0], 4, 5), &input, 0, 0, 4, 5).unwrap();
        assert_eq!(r.alphas, vec![1.0]);
        let expected: Vec<f64> = input.data().iter().map(|v| v.max(0.0)).collect();
        assert_eq!(r.raw.data(), &expected[..]);
    }

    #[test]
    fn negated_head_is_suppressed() {
        let input = random_input(1, 4, 4, 2, 0.0);
        let r = gradcam_from_network(&probe(&[-1.0], 4, 4), &input, 0, 0, 8, 8).unwrap();
        assert!(r.raw.data().iter().all(|&v| v == 0.0));
        assert!(r.normalized.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_additivity() {
        let input = random_input(2, 3, 3, 3, -0.3);
        let r = gradcam_from_network(&probe(&[1.0, 2.0], 3, 3), &input, 0, 0, 3, 3).unwrap();
        assert_eq!(r.alphas, vec![1.0, 2.0]);
        let d = input.data();
        for i in 0..9 {
            let expected = (d[i].max(0.0) + 2.0 * d[9 + i].max(0.0)).max(0.0);
            assert_eq!(r.raw.data()[i], expected);
        }
    }

    #[test]
    fn rank1_tap_rejected() {
        let input = random_input(1, 2, 2, 4, 0.0);
        let err = gradcam_from_network(&probe(&[1.0], 2, 2), &input, 0, 1, 2, 2).unwrap_err();
        assert!(matches!(err, XaiError::Argument(_)));
    }

    #[test]
    fn opaque_model_refused() {
        let model = build_toycnn(1);
        let image = &gen_shapes_dataset(1, 1).unwrap()[0].image;
        let err = gradcam_heatmap(&Opaque(&model), image, 0, "relu2").unwrap_err();
        assert!(matches!(err, XaiError::Capability(_)));
        assert!(err.to_string().contains("LIME"));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn toy_cnn_alphas_match_uniform_shift() {
        let model = build_toycnn(7);
        let image = &gen_shapes_dataset(1, 3).unwrap()[0].image;
        let class = 2;
        let r = gradcam_heatmap(&model, image, class, "relu2").unwrap();
        assert_eq!(r.normalized.shape(), &[64, 64]);
        assert!(r.raw.min() >= 0.0);

        let net = model.network();
        let tape = net
            .record(&model.input_tensor(image).unwrap(), [4])
            .unwrap();
        let act = tape.activation(4).unwrap().clone();
        let (h, w) = (act.shape()[1], act.shape()[2]);
        let eps = 1e-4;
        let logit = |k: usize, shift: f64| {
            let mut a = act.clone();
            a.data_mut()[k * h * w..(k + 1) * h * w]
                .iter_mut()
                .for_each(|v| *v += shift);
            net.eval_from(5, a).unwrap().data()[class]
        };
        for (k, &alpha) in r.alphas.iter().enumerate() {
            let numeric = (logit(k, eps) - logit(k, -eps)) / (2.0 * eps) / (h * w) as f64;
            let scale = alpha.abs().max(1e-3);
            assert!(
                (numeric - alpha).abs() <= 1e-5 * scale,
                "channel {k}: {alpha} vs {numeric}"
            );
        }
    }

    #[test]
    fn scale_equivariance() {
        let mut model = build_toycnn(5);
        let image = &gen_shapes_dataset(1, 8).unwrap()[0].image;
        let class = 1;
        let before = gradcam_heatmap(&model, image, class, "relu2").unwrap();
        let t = 3.0;
        if let Layer::Affine(head) = &mut model.network_mut().layers_mut()[8] {
            let n = head.inputs();
            head.weight.data_mut()[class * n..(class + 1) * n]
                .iter_mut()
                .for_each(|v| *v *= t);
        }
        let after = gradcam_heatmap(&model, image, class, "relu2").unwrap();
        for (a, b) in before.alphas.iter().zip(&after.alphas) {
            assert!((a * t - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        if before.raw_max > 0.0 {
            for (a, b) in before.normalized.data().iter().zip(after.normalized.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn upsample_constant_and_identity() {
        let c = upsample_bilinear(&map(3, 2, &[0.7; 6]), 9, 5).unwrap();
        assert!(c.data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let m = map(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(upsample_bilinear(&m, 2, 3).unwrap(), m);
        assert!(upsample_bilinear(&m, 0, 3).is_err());
    }

    #[test]
    fn upsample_checkerboard_centre() {
        // Half-pixel centres put output pixel 1 at source 0.25 and pixel 2 at
        // 0.75, so the centre 2×2 block blends 3:1, not 1:1.
        let out = upsample_bilinear(&map(2, 2, &[0.0, 1.0, 1.0, 0.0]), 4, 4).unwrap();
        let d = out.data();
        let centre = [d[5], d[6], d[9], d[10]];
        let expected = [0.375, 0.625, 0.625, 0.375];
        for (a, b) in centre.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{centre:?}");
        }
        assert_eq!(d[0], 0.0);
        assert_eq!(d[3], 1.0);
    }

    #[test]
    fn upsample_stays_in_bounds() {
        let mut rng = SplitMix64::new(12);
        for _ in 0..20 {
            let v: Vec<f64> = (0..12).map(|_| rng.symmetric(5.0)).collect();
            let m = map(3, 4, &v);
            let up = upsample_bilinear(&m, 17, 11).unwrap();
            assert!(up.min() >= m.min() - 1e-12 && up.max() <= m.max() + 1e-12);
        }
    }
}

//! Guided backpropagation.
//!
//! The class logit is differentiated back to the input with the guided ReLU
//! rule: at every ReLU the gradient survives only where both the forward
//! input and the incoming gradient are positive. The per-pixel map is the
//! largest absolute channel gradient, divided by its maximum.

use crate::autodiff::{backward, Network, ReluPolicy};
use crate::error::{Result, XaiError};
use crate::image::ImageU8;
use crate::model::ModelHandle;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedBackpropResult {
    /// Signed input gradient, `3 × H × W`.
    pub gradient: Tensor,
    /// `max_c |gradient|`, max-normalized, `H × W`.
    pub map: Tensor,
    pub map_max: f64,
    pub class_index: usize,
}

pub fn guided_backprop(
    model: &dyn ModelHandle,
    image: &ImageU8,
    class_index: usize,
) -> Result<GuidedBackpropResult> {
    let net = model.differentiable().ok_or_else(|| {
        XaiError::Capability(
            "guided backpropagation needs gradients, which this model does not expose; use LIME or SHAP"
                .into(),
        )
    })?;
    guided_from_network(
        net.network(),
        &net.input_tensor(image)?,
        class_index,
        ReluPolicy::Guided,
    )
}

/// Input gradient of logit `class_index` under `policy`, reduced over the
/// leading (channel) axis. Rank-1 inputs are treated as a single channel.
pub fn guided_from_network(
    net: &Network,
    input: &Tensor,
    class_index: usize,
    policy: ReluPolicy,
) -> Result<GuidedBackpropResult> {
    let tape = net.record(input, [])?;
    let grads = backward(&tape, class_index, policy)?;
    let gradient = grads
        .input
        .ok_or_else(|| XaiError::State("input gradient missing".into()))?;
    let (c, spatial): (usize, Vec<usize>) = match gradient.shape() {
        [n] => (1, vec![*n]),
        [c, rest @ ..] => (*c, rest.to_vec()),
        [] => (1, vec![1]),
    };
    let plane: usize = spatial.iter().product();
    let g = gradient.grad().unwrap_or_default();
    let mut map = vec![0.0f64; plane];
    for k in 0..c {
        for (m, v) in map.iter_mut().zip(&g[k * plane..(k + 1) * plane]) {
            *m = m.max(v.abs());
        }
    }
    let map_max = map.iter().copied().fold(0.0, f64::max);
    if map_max > 0.0 {
        map.iter_mut().for_each(|v| *v /= map_max);
    }
    let grad_tensor = Tensor::new(gradient.shape().to_vec(), g.to_vec())?;
    Ok(GuidedBackpropResult {
        gradient: grad_tensor,
        map: Tensor::new(spatial, map)?,
        map_max,
        class_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{relu_backward, Affine, Layer};
    use crate::model::{build_toycnn, gen_shapes_dataset, Opaque};
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn affine(rows: usize, cols: usize, seed: u64) -> Layer {
        let mut rng = SplitMix64::new(seed);
        let w = (0..rows * cols).map(|_| rng.symmetric(1.0)).collect();
        let b = (0..rows).map(|_| rng.symmetric(0.1)).collect();
        Layer::Affine(
            Affine::new(
                Tensor::new(vec![rows, cols], w).unwrap(),
                Tensor::from_vec(b),
            )
            .unwrap(),
        )
    }

    fn input(n: usize, seed: u64, lo: f64) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        Tensor::from_vec((0..n).map(|_| lo + rng.next_f64()).collect())
    }

    #[test]
    fn affine_only_probe_matches_standard() {
        let net = Network::new(vec![
            ("a".into(), affine(5, 8, 1)),
            ("b".into(), affine(3, 5, 2)),
        ]);
        let x = input(8, 3, -0.5);
        let g = guided_from_network(&net, &x, 1, ReluPolicy::Guided).unwrap();
        let s = guided_from_network(&net, &x, 1, ReluPolicy::Standard).unwrap();
        assert_eq!(g, s);
    }

    fn positive_probe() -> Network {
        let w = Tensor::new(vec![1, 4], vec![0.5, 1.0, 2.0, 0.25]).unwrap();
        let head = Layer::Affine(Affine::new(w, Tensor::zeros(vec![1])).unwrap());
        Network::new(vec![("relu".into(), Layer::Relu), ("head".into(), head)])
    }

    #[test]
    fn dead_relu_gives_zero_map() {
        let x = Tensor::from_vec(vec![-1.0, -0.5, -2.0, -0.1]);
        let r = guided_from_network(&positive_probe(), &x, 0, ReluPolicy::Guided).unwrap();
        assert!(r.map.data().iter().all(|&v| v == 0.0));
        assert_eq!(r.map_max, 0.0);
    }

    #[test]
    fn all_positive_probe_matches_standard_bitwise() {
        let x = Tensor::from_vec(vec![1.0, 0.5, 2.0, 0.1]);
        let g = guided_from_network(&positive_probe(), &x, 0, ReluPolicy::Guided).unwrap();
        let s = guided_from_network(&positive_probe(), &x, 0, ReluPolicy::Standard).unwrap();
        assert_eq!(g.gradient.data(), s.gradient.data());
    }

    #[test]
    fn toy_cnn_map_properties() {
        let model = build_toycnn(3);
        for sample in gen_shapes_dataset(4, 6).unwrap() {
            let r = guided_backprop(&model, &sample.image, 0).unwrap();
            assert_eq!(r.gradient.shape(), &[3, 64, 64]);
            assert_eq!(r.map.shape(), &[64, 64]);
            let g = r.gradient.data();
            for (i, &m) in r.map.data().iter().enumerate() {
                assert!((0.0..=1.0).contains(&m));
                let all_zero = (0..3).all(|c| g[c * 4096 + i] == 0.0);
                assert_eq!(m == 0.0, all_zero);
            }
            let net = model.network();
            let x = model.input_tensor(&sample.image).unwrap();
            let s = guided_from_network(net, &x, 0, ReluPolicy::Standard).unwrap();
            let nz = |t: &Tensor| t.data().iter().filter(|&&v| v != 0.0).count();
            assert!(nz(&r.gradient) <= nz(&s.gradient));
            assert_eq!(r, guided_backprop(&model, &sample.image, 0).unwrap());
        }
    }

    #[test]
    fn opaque_model_refused() {
        let model = build_toycnn(3);
        let image = &gen_shapes_dataset(1, 6).unwrap()[0].image;
        assert!(matches!(
            guided_backprop(&Opaque(&model), image, 0),
            Err(XaiError::Capability(_))
        ));
    }

    proptest! {
        #[test]
        fn guided_site_rule(pairs in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..64)) {
            let (x, up): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let out = relu_backward(&x, &up, ReluPolicy::Guided);
            for i in 0..x.len() {
                let expected = if x[i] > 0.0 && up[i] > 0.0 { up[i] } else { 0.0 };
                prop_assert_eq!(out[i], expected);
                prop_assert!(out[i] >= 0.0);
            }
        }
    }
}

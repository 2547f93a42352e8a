use crate::autodiff::{softmax, Affine, Conv2d, Layer, Network};
use crate::error::{Result, XaiError};
use crate::image::ImageU8;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const ARCH_VERSION: &str = "toycnn-v1";

/// Channel and size knobs of the toy architecture. The default is the
/// 3×64×64 → 4 class network; smaller variants exist for gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchConfig {
    /// Square input side; must be divisible by 4.
    pub input_size: usize,
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            input_size: 64,
            conv1: 16,
            conv2: 32,
            hidden: 64,
            classes: 4,
        }
    }
}

impl ArchConfig {
    pub fn flattened(&self) -> usize {
        self.conv2 * (self.input_size / 4) * (self.input_size / 4)
    }
}

/// Layer names in order. `relu2` is the last convolutional-stage activation
/// and the default Grad-CAM tap.
pub const LAYER_NAMES: [&str; 9] = [
    "conv1", "relu1", "pool1", "conv2", "relu2", "pool2", "fc1", "relu3", "fc2",
];

pub const DEFAULT_TAP: &str = "relu2";

/// conv 3×3 → relu → maxpool2 → conv 3×3 → relu → maxpool2 → affine →
/// relu → affine, followed by softmax.
///
/// [`network`](Self::network) holds everything up to the logits; softmax is
/// applied by [`predict`](Self::predict) so gradient-based explainers can
/// differentiate logits directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyConvNet {
    arch: ArchConfig,
    network: Network,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub logits: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        Prediction {
            probabilities: softmax(&logits),
            logits,
        }
    }

    /// Predicted class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        Tensor::from_vec(self.probabilities.clone()).argmax()
    }
}

/// Default-architecture model with Glorot-uniform weights from `seed`.
pub fn build_toycnn(seed: u64) -> ToyConvNet {
    ToyConvNet::new(ArchConfig::default(), seed).expect("default architecture is valid")
}

impl ToyConvNet {
    /// Weights are uniform in `(-s, s)` with `s = sqrt(6 / (fan_in + fan_out))`,
    /// drawn from one SplitMix64 stream layer by layer in row-major order.
    /// Biases start at zero and consume no draws.
    pub fn new(arch: ArchConfig, seed: u64) -> Result<Self> {
        if arch.input_size == 0 || !arch.input_size.is_multiple_of(4) {
            return Err(XaiError::Argument(format!(
                "input size must be a positive multiple of 4, got {}",
                arch.input_size
            )));
        }
        if [arch.conv1, arch.conv2, arch.hidden, arch.classes].contains(&0) {
            return Err(XaiError::Argument(format!("zero-width layer in {arch:?}")));
        }
        let mut rng = SplitMix64::new(seed);
        let mut glorot = |shape: Vec<usize>, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.symmetric(bound)).collect())
        };
        let conv1 = glorot(vec![arch.conv1, 3, 3, 3], 3 * 9, arch.conv1 * 9)?;
        let conv2 = glorot(
            vec![arch.conv2, arch.conv1, 3, 3],
            arch.conv1 * 9,
            arch.conv2 * 9,
        )?;
        let fc1 = glorot(
            vec![arch.hidden, arch.flattened()],
            arch.flattened(),
            arch.hidden,
        )?;
        let fc2 = glorot(vec![arch.classes, arch.hidden], arch.hidden, arch.classes)?;
        Self::from_parameters(arch, [conv1, conv2, fc1, fc2], None)
    }

    /// Assembles a model from the four weight tensors and optional biases.
    pub(crate) fn from_parameters(
        arch: ArchConfig,
        weights: [Tensor; 4],
        biases: Option<[Tensor; 4]>,
    ) -> Result<Self> {
        let biases = biases.unwrap_or_else(|| {
            [arch.conv1, arch.conv2, arch.hidden, arch.classes].map(|n| Tensor::zeros(vec![n]))
        });
        let [w1, w2, w3, w4] = weights;
        let [b1, b2, b3, b4] = biases;
        let layers = vec![
            Layer::Conv2d(Conv2d::new(w1, b1, 1)?),
            Layer::Relu,
            Layer::MaxPool2,
            Layer::Conv2d(Conv2d::new(w2, b2, 1)?),
            Layer::Relu,
            Layer::MaxPool2,
            Layer::Affine(Affine::new(w3, b3)?),
            Layer::Relu,
            Layer::Affine(Affine::new(w4, b4)?),
        ];
        let network = Network::new(
            LAYER_NAMES
                .iter()
                .map(|n| n.to_string())
                .zip(layers)
                .collect(),
        );
        Ok(ToyConvNet { arch, network })
    }

    pub fn arch(&self) -> ArchConfig {
        self.arch
    }

    pub fn version(&self) -> &'static str {
        ARCH_VERSION
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub(crate) fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    pub fn parameter_count(&self) -> usize {
        self.network.parameter_count()
    }

    /// Layer index for a name such as `relu2`, or a bare decimal index.
    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.network
            .index_of(name)
            .or_else(|| name.parse().ok().filter(|&i: &usize| i < LAYER_NAMES.len()))
            .ok_or_else(|| {
                XaiError::Argument(format!(
                    "unknown layer '{name}', expected one of {}",
                    LAYER_NAMES.join(", ")
                ))
            })
    }

    /// Named parameter tensors in serialization order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, layer) in self.network.names().iter().zip(self.network.layers()) {
            let (w, b) = match layer {
                Layer::Conv2d(c) => (&c.weight, &c.bias),
                Layer::Affine(a) => (&a.weight, &a.bias),
                _ => continue,
            };
            out.push((format!("{name}.weight"), w));
            out.push((format!("{name}.bias"), b));
        }
        out
    }

    /// Image bytes scaled to `[0, 1]`, planar `3 × H × W`.
    pub fn input_tensor(&self, image: &ImageU8) -> Result<Tensor> {
        let s = self.arch.input_size;
        if image.height() != s || image.width() != s {
            return Err(XaiError::dim(
                "input",
                format!(
                    "model expects {s}×{s} images, got {}×{}",
                    image.height(),
                    image.width()
                ),
            ));
        }
        let n = s * s;
        let mut data = vec![0.0; 3 * n];
        for (i, px) in image.data().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * n + i] = px[c] as f64 / 127.5 - 1.0;
            }
        }
        Tensor::new(vec![3, s, s], data)
    }

    pub fn logits(&self, input: &Tensor) -> Result<Vec<f64>> {
        Ok(self.network.eval(input)?.into_data())
    }

    pub fn predict(&self, image: &ImageU8) -> Result<Prediction> {
        let input = self.input_tensor(image)?;
        Ok(Prediction::from_logits(self.logits(&input)?))
    }
}

//! Layer descriptors and their forward/backward kernels.
//!
//! All kernels work on `channels × height × width` tensors in row-major
//! order. Convolutions use stride 1 with symmetric zero padding; pooling is
//! fixed at 2×2 with stride 2.

use crate::error::{Result, XaiError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `out × in × k × k`
    pub weight: Tensor,
    /// `out`
    pub bias: Tensor,
    pub padding: usize,
}

impl Conv2d {
    pub fn new(weight: Tensor, bias: Tensor, padding: usize) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 4 || s[2] != s[3] {
            return Err(XaiError::dim(
                "conv2d",
                format!("weight must be out×in×k×k, got {s:?}"),
            ));
        }
        if bias.shape() != [s[0]] {
            return Err(XaiError::dim(
                "conv2d",
                format!(
                    "bias shape {:?} does not match {} output channels",
                    bias.shape(),
                    s[0]
                ),
            ));
        }
        Ok(Conv2d {
            weight,
            bias,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    /// `out × in`
    pub weight: Tensor,
    /// `out`
    pub bias: Tensor,
}

impl Affine {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        let s = weight.shape();
        if s.len() != 2 {
            return Err(XaiError::dim(
                "affine",
                format!("weight must be out×in, got {s:?}"),
            ));
        }
        if bias.shape() != [s[0]] {
            return Err(XaiError::dim(
                "affine",
                format!(
                    "bias shape {:?} does not match {} outputs",
                    bias.shape(),
                    s[0]
                ),
            ));
        }
        Ok(Affine { weight, bias })
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv2d(Conv2d),
    Relu,
    MaxPool2,
    /// Flattens its input before the matrix product.
    Affine(Affine),
    /// Rank-1 input only.
    Softmax,
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::Relu => "relu",
            Layer::MaxPool2 => "maxpool2",
            Layer::Affine(_) => "affine",
            Layer::Softmax => "softmax",
        }
    }

    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Conv2d(c) => c.weight.len() + c.bias.len(),
            Layer::Affine(a) => a.weight.len() + a.bias.len(),
            _ => 0,
        }
    }
}

/// How a ReLU passes gradient backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReluPolicy {
    /// Upstream gradient wherever the forward input was positive.
    #[default]
    Standard,
    /// Upstream gradient only where the forward input was positive and the
    /// upstream gradient itself is positive.
    Guided,
}

/// Output of a layer's forward kernel plus whatever backward needs beyond
/// the input.
pub(crate) struct Forwarded {
    pub output: Tensor,
    pub argmax: Vec<usize>,
}

pub(crate) fn forward_kernel(layer: &Layer, input: &Tensor, name: &str) -> Result<Forwarded> {
    let mut argmax = Vec::new();
    let output = match layer {
        Layer::Conv2d(conv) => conv2d_forward(conv, input, name)?,
        Layer::Relu => {
            let data = input.data().iter().map(|&v| v.max(0.0)).collect();
            Tensor::new(input.shape().to_vec(), data)?
        }
        Layer::MaxPool2 => {
            let (out, idx) = maxpool2_forward(input, name)?;
            argmax = idx;
            out
        }
        Layer::Affine(affine) => affine_forward(affine, input, name)?,
        Layer::Softmax => {
            if input.rank() != 1 {
                return Err(XaiError::dim(
                    name,
                    format!("softmax expects a rank-1 input, got {:?}", input.shape()),
                ));
            }
            Tensor::from_vec(softmax(input.data()))
        }
    };
    if !output.is_finite() {
        return Err(XaiError::Numeric(format!(
            "{name} produced a non-finite value"
        )));
    }
    Ok(Forwarded { output, argmax })
}

fn chw(input: &Tensor, name: &str) -> Result<(usize, usize, usize)> {
    match *input.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(XaiError::dim(
            name,
            format!("expected channels×height×width, got {s:?}"),
        )),
    }
}

/// Output rows (or columns) `[lo, hi)` whose source index `o + k - pad`
/// lands inside `[0, len)`.
#[inline]
fn valid_range(k: usize, pad: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (len + pad).saturating_sub(k).min(out_len);
    (lo, hi.max(lo))
}

fn conv_out_dims(conv: &Conv2d, h: usize, w: usize, name: &str) -> Result<(usize, usize)> {
    let k = conv.kernel();
    let p = conv.padding;
    if h + 2 * p < k || w + 2 * p < k {
        return Err(XaiError::dim(
            name,
            format!("{h}×{w} input too small for {k}×{k} kernel with padding {p}"),
        ));
    }
    Ok((h + 2 * p - k + 1, w + 2 * p - k + 1))
}

fn conv2d_forward(conv: &Conv2d, input: &Tensor, name: &str) -> Result<Tensor> {
    let (c_in, h, w) = chw(input, name)?;
    if c_in != conv.in_channels() {
        return Err(XaiError::dim(
            name,
            format!("expected {} input channels, got {c_in}", conv.in_channels()),
        ));
    }
    let (oh, ow) = conv_out_dims(conv, h, w, name)?;
    let (c_out, k, p) = (conv.out_channels(), conv.kernel(), conv.padding);
    let x = input.data();
    let wt = conv.weight.data();
    let plane_len = oh * ow;
    let kk = c_in * k * k;
    // im2col: row r = (c, ky, kx) holds the shifted input plane, zero where
    // the kernel tap falls into padding.
    let mut cols = vec![0.0; kk * plane_len];
    for c in 0..c_in {
        let src = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            let (y_lo, y_hi) = valid_range(ky, p, h, oh);
            for kx in 0..k {
                let (x_lo, x_hi) = valid_range(kx, p, w, ow);
                let r = (c * k + ky) * k + kx;
                let dst = &mut cols[r * plane_len..(r + 1) * plane_len];
                for y in y_lo..y_hi {
                    let s0 = (y + ky - p) * w + x_lo + kx - p;
                    dst[y * ow + x_lo..y * ow + x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
    let mut out = vec![0.0; c_out * plane_len];
    for (o, plane) in out.chunks_exact_mut(plane_len).enumerate() {
        plane.fill(conv.bias.data()[o]);
    }
    // Tiled so a block of output rows and the matching im2col slab stay in
    // cache; each output still accumulates taps in ascending order.
    const TILE: usize = 256;
    const BLOCK: usize = 8;
    for t0 in (0..plane_len).step_by(TILE) {
        let t1 = (t0 + TILE).min(plane_len);
        for o0 in (0..c_out).step_by(BLOCK) {
            let o1 = (o0 + BLOCK).min(c_out);
            for r in 0..kk {
                let col = &cols[r * plane_len + t0..r * plane_len + t1];
                for o in o0..o1 {
                    let wv = wt[o * kk + r];
                    let dst = &mut out[o * plane_len + t0..o * plane_len + t1];
                    for (d, s) in dst.iter_mut().zip(col) {
                        *d += wv * s;
                    }
                }
            }
        }
    }
    Tensor::new(vec![c_out, oh, ow], out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`; the input gradient is
/// skipped when `need_input` is false.
pub(crate) fn conv2d_backward(
    conv: &Conv2d,
    input: &Tensor,
    upstream: &[f64],
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, k, p) = (conv.out_channels(), conv.kernel(), conv.padding);
    let (oh, ow) = (h + 2 * p - k + 1, w + 2 * p - k + 1);
    let x = input.data();
    let wt = conv.weight.data();
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; c_out];
    let mut gx = need_input.then(|| vec![0.0; x.len()]);
    for o in 0..c_out {
        let g = &upstream[o * oh * ow..(o + 1) * oh * ow];
        gb[o] = g.iter().sum();
        for c in 0..c_in {
            let src = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                let (y_lo, y_hi) = valid_range(ky, p, h, oh);
                for kx in 0..k {
                    let (x_lo, x_hi) = valid_range(kx, p, w, ow);
                    let widx = ((o * c_in + c) * k + ky) * k + kx;
                    let wv = wt[widx];
                    let mut acc = 0.0;
                    for y in y_lo..y_hi {
                        let sy = y + ky - p;
                        let grow = &g[y * ow + x_lo..y * ow + x_hi];
                        let s0 = sy * w + x_lo + kx - p;
                        let srow = &src[s0..s0 + (x_hi - x_lo)];
                        acc += grow.iter().zip(srow).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(gx) = gx.as_mut() {
                            let off = c * h * w + s0;
                            let drow = &mut gx[off..off + (x_hi - x_lo)];
                            for (d, gv) in drow.iter_mut().zip(grow) {
                                *d += wv * gv;
                            }
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    (gx, gw, gb)
}

fn maxpool2_forward(input: &Tensor, name: &str) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = chw(input, name)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(XaiError::dim(
            name,
            format!("maxpool2 needs even height and width, got {h}×{w}"),
        ));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * xo;
                // Row-major window order; strict comparison keeps the first maximum.
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, idx))
}

fn affine_forward(affine: &Affine, input: &Tensor, name: &str) -> Result<Tensor> {
    if input.len() != affine.inputs() {
        return Err(XaiError::dim(
            name,
            format!(
                "expected {} inputs, got {} (shape {:?})",
                affine.inputs(),
                input.len(),
                input.shape()
            ),
        ));
    }
    let x = input.data();
    let n_in = affine.inputs();
    let out = affine
        .weight
        .data()
        .chunks_exact(n_in)
        .zip(affine.bias.data())
        .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect();
    Ok(Tensor::from_vec(out))
}

pub(crate) fn affine_backward(
    affine: &Affine,
    input: &Tensor,
    upstream: &[f64],
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let x = input.data();
    let n_in = affine.inputs();
    let mut gw = vec![0.0; affine.weight.len()];
    for (row, g) in gw.chunks_exact_mut(n_in).zip(upstream) {
        for (d, v) in row.iter_mut().zip(x) {
            *d = g * v;
        }
    }
    let gx = need_input.then(|| {
        let mut gx = vec![0.0; n_in];
        for (row, g) in affine.weight.data().chunks_exact(n_in).zip(upstream) {
            for (d, w) in gx.iter_mut().zip(row) {
                *d += g * w;
            }
        }
        gx
    });
    (gx, gw, upstream.to_vec())
}

/// ReLU backward under `policy`. `input` is the forward input of the ReLU.
pub fn relu_backward(input: &[f64], upstream: &[f64], policy: ReluPolicy) -> Vec<f64> {
    input
        .iter()
        .zip(upstream)
        .map(|(&x, &g)| {
            let open = match policy {
                ReluPolicy::Standard => x > 0.0,
                ReluPolicy::Guided => x > 0.0 && g > 0.0,
            };
            if open {
                g
            } else {
                0.0
            }
        })
        .collect()
}

pub(crate) fn maxpool2_backward(input_len: usize, argmax: &[usize], upstream: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; input_len];
    for (&i, &g) in argmax.iter().zip(upstream) {
        gx[i] += g;
    }
    gx
}

/// Numerically stable softmax. Every output is at least the smallest
/// positive normal `f64`, so probabilities stay strictly positive.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter()
        .map(|e| (e / sum).max(f64::MIN_POSITIVE))
        .collect()
}

pub(crate) fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    let dot: f64 = probs.iter().zip(upstream).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(upstream)
        .map(|(p, g)| p * (g - dot))
        .collect()
}

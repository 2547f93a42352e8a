//! Local surrogate explanations over superpixels.
//!
//! The black box is probed on perturbed copies of the image in which random
//! subsets of superpixels are replaced by the baseline. Each probe is
//! weighted by its proximity to the original (fewer removed regions, larger
//! weight) and a weighted ridge regression fits a linear model in mask
//! space. Sparsity comes from keeping the `top_k` strongest features and
//! refitting on those alone.

use serde::{Deserialize, Serialize};

use crate::error::{Result, XaiError};
use crate::image::ImageU8;
use crate::model::ModelHandle;
use crate::rng::SplitMix64;
use crate::segmentation::{apply_mask, Baseline, CoalitionMask, Segmentation};

/// How perturbation masks are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskSampling {
    /// The all-present mask followed by i.i.d. fair coin flips per bit.
    #[default]
    Bernoulli,
    /// Every one of the `2^K` masks, all-present first. Ignores `n_samples`.
    Exhaustive,
}

/// Largest `K` accepted for [`MaskSampling::Exhaustive`].
pub const EXHAUSTIVE_K_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub n_samples: usize,
    /// Width of the exponential proximity kernel.
    pub kernel_width: f64,
    pub ridge: f64,
    pub top_k: usize,
    pub baseline: Baseline,
    pub seed: u64,
    pub sampling: MaskSampling,
}

impl Default for LimeConfig {
    fn default() -> Self {
        LimeConfig {
            n_samples: 1000,
            kernel_width: 0.25,
            ridge: 1e-3,
            top_k: 8,
            baseline: Baseline::default(),
            seed: 0,
            sampling: MaskSampling::Bernoulli,
        }
    }
}

impl LimeConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        let bad = |m: String| Err(XaiError::Argument(m));
        if k == 0 {
            return bad("LIME needs at least one superpixel".into());
        }
        match self.sampling {
            MaskSampling::Bernoulli if self.n_samples < k + 2 => {
                return bad(format!(
                    "n_samples {} must be at least K + 2 = {}",
                    self.n_samples,
                    k + 2
                ))
            }
            MaskSampling::Exhaustive if k > EXHAUSTIVE_K_LIMIT => {
                return bad(format!(
                    "exhaustive sampling supports K <= {EXHAUSTIVE_K_LIMIT}, got {k}"
                ))
            }
            _ => {}
        }
        if !(self.kernel_width > 0.0) {
            return bad(format!(
                "kernel width must be positive, got {}",
                self.kernel_width
            ));
        }
        if !(self.ridge >= 0.0) {
            return bad(format!("ridge must be non-negative, got {}", self.ridge));
        }
        if self.top_k == 0 || self.top_k > k {
            return bad(format!("top_k must lie in [1, {k}], got {}", self.top_k));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeExplanation {
    /// One entry per superpixel; zero outside the selected features.
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Weighted R² of the refitted surrogate on the probe set.
    pub r_squared: f64,
    /// Kept feature indices, ascending.
    pub selected: Vec<usize>,
    pub config: LimeConfig,
}

/// `n` masks over `k` features: mask 0 is all-present, the rest draw one
/// coin per bit from `SplitMix64(seed)`.
pub fn sample_masks(k: usize, n: usize, seed: u64) -> Result<Vec<CoalitionMask>> {
    if n < 2 {
        return Err(XaiError::Argument(format!(
            "need at least 2 masks, got {n}"
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let mut masks = Vec::with_capacity(n);
    masks.push(CoalitionMask::full(k));
    for _ in 1..n {
        masks.push(CoalitionMask::new((0..k).map(|_| rng.coin()).collect()));
    }
    Ok(masks)
}

/// All `2^k` masks, starting from the all-present one.
pub fn exhaustive_masks(k: usize) -> Vec<CoalitionMask> {
    let top = (1u64 << k) - 1;
    (0..=top)
        .rev()
        .map(|i| CoalitionMask::from_index(i, k))
        .collect()
}

/// `exp(-d²/σ²)` with `d` the fraction of absent superpixels.
pub fn proximity_weight(mask: &CoalitionMask, sigma: f64) -> f64 {
    let d = mask.absent_count() as f64 / mask.len().max(1) as f64;
    (-(d * d) / (sigma * sigma)).exp()
}

/// Builds `XᵀWX + λI′` and `XᵀWy`, leaving column 0 (the intercept)
/// unpenalized.
pub(crate) fn normal_equations(
    x: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    lambda: f64,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = x.len();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(XaiError::Argument(format!(
            "design has {n} rows, {} responses and {} weights",
            y.len(),
            w.len()
        )));
    }
    let p = x[0].len();
    if p == 0 || x.iter().any(|r| r.len() != p) {
        return Err(XaiError::Argument(
            "design rows must share a positive width".into(),
        ));
    }
    if w.iter().any(|&v| !(v >= 0.0)) || w.iter().all(|&v| v == 0.0) {
        return Err(XaiError::Argument(
            "weights must be non-negative and not all zero".into(),
        ));
    }
    if !(lambda >= 0.0) {
        return Err(XaiError::Argument(format!(
            "ridge must be non-negative, got {lambda}"
        )));
    }
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        if wi == 0.0 {
            continue;
        }
        for i in 0..p {
            let wxi = wi * row[i];
            if wxi == 0.0 {
                continue;
            }
            b[i] += wxi * yi;
            for j in i..p {
                a[i][j] += wxi * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            a[i][j] = a[j][i];
        }
        if i > 0 {
            a[i][i] += lambda;
        }
    }
    Ok((a, b))
}

/// Lower-triangular factor, or `None` when a pivot is not safely positive.
fn cholesky(a: &[Vec<f64>], jitter: f64, tol: f64) -> Option<Vec<Vec<f64>>> {
    let p = a.len();
    let mut l = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = a[i][j] + if i == j { jitter } else { 0.0 };
            for k in 0..j {
                s -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(s > tol) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Weighted ridge regression via Cholesky on the normal equations.
///
/// Column 0 of `x` is the intercept and carries no penalty. If the
/// factorization fails, a diagonal jitter of `1e-12` (relative to the mean
/// diagonal) is added and grown tenfold up to `1e-6` before giving up.
pub fn fit_weighted_ridge(x: &[Vec<f64>], y: &[f64], w: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let (a, b) = normal_equations(x, y, w, lambda)?;
    let p = b.len();
    let scale = (0..p).map(|i| a[i][i]).sum::<f64>() / p as f64;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(XaiError::IllConditioned(
            "normal matrix has no positive diagonal".into(),
        ));
    }
    let tol = scale * 1e-13;
    let mut jitter = 0.0;
    let l = loop {
        if let Some(l) = cholesky(&a, jitter * scale, tol) {
            break l;
        }
        jitter = if jitter == 0.0 { 1e-12 } else { jitter * 10.0 };
        if jitter > 1e-6 * (1.0 + 1e-9) {
            return Err(XaiError::IllConditioned(
                "Cholesky failed with jitter up to 1e-6".into(),
            ));
        }
    };
    let mut z = vec![0.0; p];
    for i in 0..p {
        let s: f64 = (0..i).map(|k| l[i][k] * z[k]).sum();
        z[i] = (b[i] - s) / l[i][i];
    }
    let mut beta = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|k| l[k][i] * beta[k]).sum();
        beta[i] = (z[i] - s) / l[i][i];
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(XaiError::IllConditioned("non-finite coefficients".into()));
    }
    Ok(beta)
}

/// Explains `class_index` of `model` on `image` over the regions of `seg`.
pub fn explain_lime(
    model: &dyn ModelHandle,
    image: &ImageU8,
    seg: &Segmentation,
    class_index: usize,
    config: &LimeConfig,
) -> Result<LimeExplanation> {
    if class_index >= model.class_count() {
        return Err(XaiError::Index {
            index: class_index,
            len: model.class_count(),
        });
    }
    explain_lime_game(
        |mask| {
            let perturbed = apply_mask(image, seg, mask, config.baseline)?;
            Ok(model.predict(&perturbed)?.probabilities[class_index])
        },
        seg.region_count(),
        config,
    )
}

/// LIME against an arbitrary response in mask space.
pub fn explain_lime_game<F>(
    mut response: F,
    k: usize,
    config: &LimeConfig,
) -> Result<LimeExplanation>
where
    F: FnMut(&CoalitionMask) -> Result<f64>,
{
    config.validate(k)?;
    let masks = match config.sampling {
        MaskSampling::Bernoulli => sample_masks(k, config.n_samples, config.seed)?,
        MaskSampling::Exhaustive => exhaustive_masks(k),
    };
    let mut y = Vec::with_capacity(masks.len());
    for m in &masks {
        let v = response(m)?;
        if !v.is_finite() {
            return Err(XaiError::Numeric(format!("black box returned {v}")));
        }
        y.push(v);
    }
    let w: Vec<f64> = masks
        .iter()
        .map(|m| proximity_weight(m, config.kernel_width))
        .collect();

    let design = |cols: &[usize]| -> Vec<Vec<f64>> {
        masks
            .iter()
            .map(|m| {
                std::iter::once(1.0)
                    .chain(
                        cols.iter()
                            .map(|&j| if m.is_present(j) { 1.0 } else { 0.0 }),
                    )
                    .collect()
            })
            .collect()
    };

    let all: Vec<usize> = (0..k).collect();
    let full = fit_weighted_ridge(&design(&all), &y, &w, config.ridge)?;

    let n = masks.len() as f64;
    let mut scored: Vec<(f64, usize)> = (0..k)
        .map(|j| {
            let mean = masks.iter().filter(|m| m.is_present(j)).count() as f64 / n;
            let std = (mean * (1.0 - mean)).sqrt();
            (full[j + 1].abs() * std, j)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut selected: Vec<usize> = scored[..config.top_k].iter().map(|&(_, j)| j).collect();
    selected.sort_unstable();

    let x = design(&selected);
    let refit = fit_weighted_ridge(&x, &y, &w, config.ridge)?;
    let mut coefficients = vec![0.0; k];
    for (&j, &c) in selected.iter().zip(&refit[1..]) {
        coefficients[j] = c;
    }

    let wsum: f64 = w.iter().sum();
    let ymean = w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for ((row, &yi), &wi) in x.iter().zip(&y).zip(&w) {
        let pred: f64 = row.iter().zip(&refit).map(|(a, b)| a * b).sum();
        ss_res += wi * (yi - pred) * (yi - pred);
        ss_tot += wi * (yi - ymean) * (yi - ymean);
    }
    let tiny = 1e-30 * wsum;
    let r_squared = if ss_tot > tiny {
        1.0 - ss_res / ss_tot
    } else if ss_res <= tiny {
        1.0
    } else {
        0.0
    };

    Ok(LimeExplanation {
        coefficients,
        intercept: refit[0],
        r_squared,
        selected,
        config: *config,
    })
}

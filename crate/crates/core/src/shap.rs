//! Shapley attributions over superpixel coalitions.
//!
//! A coalition keeps its superpixels and paints the rest with the baseline;
//! the game value is the class probability on the result. Exact mode
//! enumerates all `2^K` coalitions once and combines them with the classical
//! `|S|!(K-|S|-1)!/K!` weights, computed in log space. Monte-Carlo mode
//! averages marginal contributions along random orderings.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, XaiError};
use crate::image::ImageU8;
use crate::model::ModelHandle;
use crate::rng::SplitMix64;
use crate::segmentation::{apply_mask, Baseline, CoalitionMask, Segmentation};

/// Hard ceiling on `exact_k_limit`.
pub const MAX_EXACT_K: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapMode {
    Exact,
    MonteCarlo { n_permutations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapConfig {
    pub mode: ShapMode,
    pub baseline: Baseline,
    pub seed: u64,
    pub exact_k_limit: usize,
}

impl Default for ShapConfig {
    fn default() -> Self {
        ShapConfig {
            mode: ShapMode::Exact,
            baseline: Baseline::default(),
            seed: 0,
            exact_k_limit: 12,
        }
    }
}

impl ShapConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.exact_k_limit > MAX_EXACT_K {
            return Err(XaiError::Argument(format!(
                "exact_k_limit {} exceeds {MAX_EXACT_K}",
                self.exact_k_limit
            )));
        }
        match self.mode {
            ShapMode::Exact if k > self.exact_k_limit => Err(XaiError::Budget(format!(
                "exact Shapley over {k} features exceeds the limit of {}; use Monte-Carlo mode",
                self.exact_k_limit
            ))),
            ShapMode::MonteCarlo { n_permutations: 0 } => Err(XaiError::Argument(
                "n_permutations must be at least 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyAttribution {
    pub phi: Vec<f64>,
    pub v_full: f64,
    pub v_empty: f64,
    /// Per-feature standard error; Monte-Carlo only.
    pub std_errors: Option<Vec<f64>>,
}

impl ShapleyAttribution {
    /// `Σφ − (v_full − v_empty)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.phi.iter().sum::<f64>() - (self.v_full - self.v_empty)
    }
}

/// Probability of `class_index` once the absent superpixels are replaced.
pub fn coalition_value(
    model: &dyn ModelHandle,
    image: &ImageU8,
    seg: &Segmentation,
    mask: &CoalitionMask,
    baseline: Baseline,
    class_index: usize,
) -> Result<f64> {
    if class_index >= model.class_count() {
        return Err(XaiError::Index {
            index: class_index,
            len: model.class_count(),
        });
    }
    let perturbed = apply_mask(image, seg, mask, baseline)?;
    Ok(model.predict(&perturbed)?.probabilities[class_index])
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for i in 1..=n {
        acc += (i as f64).ln();
        out.push(acc);
    }
    out
}

/// Exact Shapley values by full coalition enumeration.
///
/// `value_fn` is called exactly once per coalition, in index order.
pub fn exact_shapley<F>(mut value_fn: F, k: usize, exact_k_limit: usize) -> Result<Vec<f64>>
where
    F: FnMut(&CoalitionMask) -> Result<f64>,
{
    let limit = exact_k_limit.min(MAX_EXACT_K);
    if k > limit {
        return Err(XaiError::Budget(format!(
            "exact Shapley over {k} features exceeds the limit of {limit}; use Monte-Carlo mode"
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let count = 1usize << k;
    let mut values = Vec::with_capacity(count);
    for index in 0..count {
        let v = value_fn(&CoalitionMask::from_index(index as u64, k))?;
        if !v.is_finite() {
            return Err(XaiError::Numeric(format!(
                "coalition {index} has value {v}"
            )));
        }
        values.push(v);
    }
    let lf = ln_factorials(k);
    let weights: Vec<f64> = (0..k)
        .map(|s| (lf[s] + lf[k - s - 1] - lf[k]).exp())
        .collect();

    let mut phi = vec![0.0; k];
    for (i, slot) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut by_size = vec![0.0; k];
        for s in 0..count {
            if s & bit == 0 {
                by_size[s.count_ones() as usize] += values[s | bit] - values[s];
            }
        }
        *slot = by_size.iter().zip(&weights).map(|(a, w)| a * w).sum();
    }
    Ok(phi)
}

/// Permutation-sampling estimate with per-feature standard errors.
pub fn mc_shapley<F>(
    mut value_fn: F,
    k: usize,
    n_permutations: usize,
    seed: u64,
) -> Result<ShapleyAttribution>
where
    F: FnMut(&CoalitionMask) -> Result<f64>,
{
    if n_permutations == 0 {
        return Err(XaiError::Argument(
            "n_permutations must be at least 1".into(),
        ));
    }
    let mut memo: HashMap<Vec<bool>, f64> = HashMap::new();
    let mut value = |mask: &CoalitionMask| -> Result<f64> {
        if let Some(&v) = memo.get(mask.bits()) {
            return Ok(v);
        }
        let v = value_fn(mask)?;
        if !v.is_finite() {
            return Err(XaiError::Numeric(format!("coalition value {v}")));
        }
        memo.insert(mask.bits().to_vec(), v);
        Ok(v)
    };

    let v_empty = value(&CoalitionMask::empty(k))?;
    let v_full = value(&CoalitionMask::full(k))?;
    let mut rng = SplitMix64::new(seed);
    let mut sum = vec![0.0; k];
    let mut sum_sq = vec![0.0; k];
    let mut order: Vec<usize> = (0..k).collect();
    for _ in 0..n_permutations {
        order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
        rng.shuffle(&mut order);
        let mut mask = CoalitionMask::empty(k);
        let mut prev = v_empty;
        for &player in &order {
            mask.set(player, true);
            let next = value(&mask)?;
            let delta = next - prev;
            sum[player] += delta;
            sum_sq[player] += delta * delta;
            prev = next;
        }
    }
    let n = n_permutations as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_errors = sum_sq
        .iter()
        .zip(&phi)
        .map(|(&sq, &m)| {
            if n_permutations < 2 {
                0.0
            } else {
                ((sq - n * m * m).max(0.0) / (n - 1.0)).sqrt() / n.sqrt()
            }
        })
        .collect();
    Ok(ShapleyAttribution {
        phi,
        v_full,
        v_empty,
        std_errors: Some(std_errors),
    })
}

/// Shapley attribution of `class_index` over the regions of `seg`.
///
/// Returns [`XaiError::Consistency`] if the result violates efficiency.
pub fn explain_shap(
    model: &dyn ModelHandle,
    image: &ImageU8,
    seg: &Segmentation,
    class_index: usize,
    config: &ShapConfig,
) -> Result<ShapleyAttribution> {
    if class_index >= model.class_count() {
        return Err(XaiError::Index {
            index: class_index,
            len: model.class_count(),
        });
    }
    let game = |mask: &CoalitionMask| {
        coalition_value(model, image, seg, mask, config.baseline, class_index)
    };
    explain_shap_game(game, seg.region_count(), config)
}

/// [`explain_shap`] over an arbitrary coalition game.
pub fn explain_shap_game<F>(
    mut game: F,
    k: usize,
    config: &ShapConfig,
) -> Result<ShapleyAttribution>
where
    F: FnMut(&CoalitionMask) -> Result<f64>,
{
    config.validate(k)?;
    let result = match config.mode {
        ShapMode::Exact => {
            let mut ends = (0.0, 0.0);
            let top = (1u64 << k) - 1;
            let phi = exact_shapley(
                |m| {
                    let v = game(m)?;
                    match m.to_index() {
                        Some(0) => ends.0 = v,
                        Some(i) if i == top => ends.1 = v,
                        _ => {}
                    }
                    Ok(v)
                },
                k,
                config.exact_k_limit,
            )?;
            ShapleyAttribution {
                phi,
                v_full: ends.1,
                v_empty: ends.0,
                std_errors: None,
            }
        }
        ShapMode::MonteCarlo { n_permutations } => {
            mc_shapley(game, k, n_permutations, config.seed)?
        }
    };
    let gap = result.efficiency_gap().abs();
    let tolerance = match &result.std_errors {
        None => 1e-9,
        Some(se) => (4.0 * se.iter().map(|s| s * s).sum::<f64>().sqrt()).max(1e-9),
    };
    if !(gap <= tolerance) {
        return Err(XaiError::Consistency(format!(
            "Shapley efficiency violated by {gap:e} (tolerance {tolerance:e})"
        )));
    }
    Ok(result)
}

//! Agreement checks between the fast paths and the brute-force oracles.

use std::fmt;

use crate::autodiff::{backward, Layer, Network, ReluPolicy};
use crate::error::{Result, XaiError};
use crate::image::ImageU8;
use crate::lime::fit_weighted_ridge;
use crate::model::{ArchConfig, ToyConvNet};
use crate::oracles::{permutation_shapley, wls_solve_elimination, OracleBudget};
use crate::rng::SplitMix64;
use crate::shap::exact_shapley;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Shapley,
    Grad,
    Wls,
}

impl Suite {
    pub const ALL: [Suite; 3] = [Suite::Shapley, Suite::Grad, Suite::Wls];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Shapley => "shapley",
            Suite::Grad => "grad",
            Suite::Wls => "wls",
        }
    }

    /// Runs the suite at its default size.
    pub fn run(self) -> Result<SuiteOutcome> {
        match self {
            Suite::Shapley => verify_shapley(20, 8, 0),
            Suite::Grad => verify_gradients(10, 50, 0),
            Suite::Wls => verify_wls(20, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteOutcome {
    pub suite: &'static str,
    pub checks: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

impl fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} checks, max error {:.3e} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite,
            self.checks,
            self.max_error,
            self.tolerance
        )
    }
}

/// Exact enumeration against the permutation oracle on random games.
pub fn verify_shapley(games: usize, k: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut max_error = 0.0f64;
    for g in 0..games as u64 {
        let mut rng = SplitMix64::new(seed.wrapping_add(g));
        let table: Vec<f64> = (0..1usize << k).map(|_| rng.next_f64()).collect();
        let game = |m: &crate::CoalitionMask| Ok(table[m.to_index().unwrap_or(0) as usize]);
        let fast = exact_shapley(game, k, k.max(12))?;
        let slow = permutation_shapley(game, k, &OracleBudget::default())?;
        for (a, b) in fast.iter().zip(&slow) {
            max_error = max_error.max((a - b).abs());
        }
        let gap = fast.iter().sum::<f64>() - (table[(1 << k) - 1] - table[0]);
        max_error = max_error.max(gap.abs());
    }
    Ok(SuiteOutcome {
        suite: "shapley",
        checks: games,
        max_error,
        tolerance: 1e-9,
    })
}

fn param_mut(net: &mut Network, layer: usize, bias: bool) -> Option<&mut Tensor> {
    match &mut net.layers_mut()[layer] {
        Layer::Conv2d(c) => Some(if bias { &mut c.bias } else { &mut c.weight }),
        Layer::Affine(a) => Some(if bias { &mut a.bias } else { &mut a.weight }),
        _ => None,
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Backprop parameter gradients of a class logit against central
/// differences, on reduced `16 × 16` toy CNNs.
pub fn verify_gradients(models: usize, coords_per_model: usize, seed: u64) -> Result<SuiteOutcome> {
    const EPS: f64 = 1e-5;
    const FLOOR: f64 = 1e-6;
    let arch = ArchConfig {
        input_size: 16,
        ..ArchConfig::default()
    };
    let mut max_error = 0.0f64;
    for m in 0..models as u64 {
        let model = ToyConvNet::new(arch, seed.wrapping_add(m))?;
        let mut rng = SplitMix64::new(seed.wrapping_add(m).wrapping_mul(0x9e37_79b9));
        let pixels = (0..16 * 16 * 3).map(|_| rng.below(256) as u8).collect();
        let input = model.input_tensor(&ImageU8::new(16, 16, pixels)?)?;
        let class = (m as usize) % arch.classes;

        let net = model.network();
        let tape = net.record(&input, [])?;
        let grads = backward(&tape, class, ReluPolicy::Standard)?;
        let mut slots = Vec::new();
        for (layer, p) in grads.params.iter().enumerate() {
            if let Some(p) = p {
                slots.push((layer, false, p.weight.data().to_vec()));
                slots.push((layer, true, p.bias.data().to_vec()));
            }
        }
        let total: usize = slots.iter().map(|s| s.2.len()).sum();
        let mut probe = net.clone();
        for _ in 0..coords_per_model {
            let mut at = rng.below(total as u64) as usize;
            let (layer, bias, grad) = slots
                .iter()
                .find(|s| {
                    if at < s.2.len() {
                        true
                    } else {
                        at -= s.2.len();
                        false
                    }
                })
                .ok_or_else(|| XaiError::State("parameter index out of range".into()))?;
            let analytic = grad[at];
            let mut logit_at = |delta: f64| -> Result<f64> {
                let t = param_mut(&mut probe, *layer, *bias)
                    .ok_or_else(|| XaiError::State("layer has no parameters".into()))?;
                let x0 = t.data()[at];
                t.data_mut()[at] = x0 + delta;
                let out = probe.eval(&input)?.data()[class];
                param_mut(&mut probe, *layer, *bias).unwrap().data_mut()[at] = x0;
                Ok(out)
            };
            let numeric = (logit_at(EPS)? - logit_at(-EPS)?) / (2.0 * EPS);
            max_error = max_error.max(relative_error(analytic, numeric, FLOOR));
        }
    }
    Ok(SuiteOutcome {
        suite: "grad",
        checks: models * coords_per_model,
        max_error,
        tolerance: 1e-6,
    })
}

/// Cholesky ridge against Gaussian elimination on random weighted systems.
pub fn verify_wls(systems: usize, seed: u64) -> Result<SuiteOutcome> {
    let mut max_error = 0.0f64;
    for s in 0..systems as u64 {
        let mut rng = SplitMix64::new(seed.wrapping_add(s));
        let p = 2 + rng.below(10) as usize;
        let n = p + 5 + rng.below(40) as usize;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                std::iter::once(1.0)
                    .chain((1..p).map(|_| rng.symmetric(1.0)))
                    .collect()
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.symmetric(2.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| 0.05 + rng.next_f64()).collect();
        let lambda = [0.0, 1e-3, 1.0][s as usize % 3];
        let a = fit_weighted_ridge(&x, &y, &w, lambda)?;
        let b = wls_solve_elimination(&x, &y, &w, lambda)?;
        for (u, v) in a.iter().zip(&b) {
            max_error = max_error.max((u - v).abs());
        }
    }
    Ok(SuiteOutcome {
        suite: "wls",
        checks: systems,
        max_error,
        tolerance: 1e-8,
    })
}

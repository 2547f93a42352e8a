//! Deliberately naive reference implementations.
//!
//! Each oracle computes the same quantity as a production path by a
//! different route: Shapley values as an average over every permutation,
//! gradients by central differences, weighted ridge coefficients by Gaussian
//! elimination. They ship with the library so the `verify` command can run
//! them on demand.

use crate::error::{Result, XaiError};
use crate::segmentation::CoalitionMask;
use crate::tensor::Tensor;

/// Hard limits checked before an oracle starts. Exceeding one is an error,
/// never a silent truncation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleBudget {
    /// At most 10: 10! permutations is the largest walk we accept.
    pub max_coalition_bits: usize,
    pub max_fd_coordinates: usize,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget {
            max_coalition_bits: 10,
            max_fd_coordinates: 100_000,
        }
    }
}

/// Order-fixed pairwise summation (binary-counter form, O(log n) memory).
#[derive(Debug, Default, Clone)]
pub(crate) struct PairwiseSum {
    stack: Vec<(f64, u32)>,
}

impl PairwiseSum {
    pub fn add(&mut self, value: f64) {
        let mut cur = (value, 0u32);
        while let Some(&(top, level)) = self.stack.last() {
            if level != cur.1 {
                break;
            }
            self.stack.pop();
            cur = (top + cur.0, level + 1);
        }
        self.stack.push(cur);
    }

    pub fn total(&self) -> f64 {
        self.stack.iter().rev().fold(0.0, |acc, &(v, _)| acc + v)
    }
}

/// Lexicographic successor of `perm` in place; false after the last one.
fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

/// Shapley values as the exact mean of marginal contributions over all
/// `k!` orderings, enumerated lexicographically.
pub fn permutation_shapley<F>(mut value_fn: F, k: usize, budget: &OracleBudget) -> Result<Vec<f64>>
where
    F: FnMut(&CoalitionMask) -> Result<f64>,
{
    let limit = budget.max_coalition_bits.min(10);
    if k > limit {
        return Err(XaiError::Budget(format!(
            "permutation oracle supports at most {limit} players, got {k}"
        )));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut memo: Vec<Option<f64>> = vec![None; 1 << k];
    let mut value = |index: usize| -> Result<f64> {
        if let Some(v) = memo[index] {
            return Ok(v);
        }
        let v = value_fn(&CoalitionMask::from_index(index as u64, k))?;
        memo[index] = Some(v);
        Ok(v)
    };

    let mut sums = vec![PairwiseSum::default(); k];
    let mut perm: Vec<usize> = (0..k).collect();
    let mut count = 0u64;
    loop {
        let mut coalition = 0usize;
        let mut prev = value(0)?;
        for &player in &perm {
            coalition |= 1 << player;
            let next = value(coalition)?;
            sums[player].add(next - prev);
            prev = next;
        }
        count += 1;
        if !next_permutation(&mut perm) {
            break;
        }
    }
    Ok(sums.iter().map(|s| s.total() / count as f64).collect())
}

/// Central-difference gradient over every coordinate of `point`.
pub fn finite_diff<F>(f: F, point: &Tensor, epsilon: f64, budget: &OracleBudget) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    finite_diff_at(f, point, &coords, epsilon, budget)
}

/// Central differences restricted to `coordinates`; entry `i` of the result
/// belongs to `coordinates[i]`.
pub fn finite_diff_at<F>(
    mut f: F,
    point: &Tensor,
    coordinates: &[usize],
    epsilon: f64,
    budget: &OracleBudget,
) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if coordinates.len() > budget.max_fd_coordinates {
        return Err(XaiError::Budget(format!(
            "{} finite-difference coordinates requested, budget is {}",
            coordinates.len(),
            budget.max_fd_coordinates
        )));
    }
    let mut probe = point.clone();
    let mut out = Vec::with_capacity(coordinates.len());
    for &c in coordinates {
        if c >= point.len() {
            return Err(XaiError::Index {
                index: c,
                len: point.len(),
            });
        }
        let x0 = point.data()[c];
        probe.data_mut()[c] = x0 + epsilon;
        let plus = f(&probe)?;
        probe.data_mut()[c] = x0 - epsilon;
        let minus = f(&probe)?;
        probe.data_mut()[c] = x0;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(XaiError::Numeric(format!(
                "non-finite evaluation at coordinate {c}"
            )));
        }
        out.push((plus - minus) / (2.0 * epsilon));
    }
    Ok(out)
}

/// Solves `(XᵀWX + λI′)β = XᵀWy` by Gaussian elimination with partial
/// pivoting. Column 0 of `x` is the intercept and is not penalized.
pub fn wls_solve_elimination(
    x: &[Vec<f64>],
    y: &[f64],
    w: &[f64],
    lambda: f64,
) -> Result<Vec<f64>> {
    let (mut a, mut b) = crate::lime::normal_equations(x, y, w, lambda)?;
    let p = b.len();
    for col in 0..p {
        let pivot_row = (col..p)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap_or(col);
        if a[pivot_row][col].abs() < 1e-14 {
            return Err(XaiError::IllConditioned(format!(
                "pivot {:.3e} in column {col} is below 1e-14",
                a[pivot_row][col]
            )));
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..p {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..p {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut beta = vec![0.0; p];
    for row in (0..p).rev() {
        let tail: f64 = (row + 1..p).map(|k| a[row][k] * beta[k]).sum();
        beta[row] = (b[row] - tail) / a[row][row];
    }
    Ok(beta)
}

//! α-entmax and its threshold.
//!
//! ```text
//! α-entmax(z) = [(α - 1) z - τ(z) 1]₊^(1 / (α - 1))
//! ```
//!
//! with τ chosen so the output sums to one. α = 1 is softmax (dense), α = 2 is
//! sparsemax. For α > 1 entries at or below the threshold get exactly zero
//! probability, which is what makes attention graphs well defined.
//!
//! Dispatch:
//! - α = 1: softmax
//! - α = 2: sort-based sparsemax
//! - α = 1.5: sort-based exact solver (closed form per support size)
//! - anything else: bisection on τ

use crate::error::{Error, Result};

/// Entries with probability above this value count as part of the support.
pub const SUPPORT_EPS: f64 = 1e-12;

/// Entrywise tolerance used when comparing masked and unmasked outputs.
pub const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntmaxParams {
    pub alpha: f64,
    /// Bisection stops once the normalization sum is within this distance of one.
    pub bisection_tol: f64,
    pub bisection_max_iter: usize,
}

impl Default for EntmaxParams {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            bisection_tol: 1e-9,
            bisection_max_iter: 100,
        }
    }
}

impl EntmaxParams {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || self.alpha < 1.0 {
            return Err(Error::domain(format!(
                "alpha must be a finite value >= 1, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// A probability vector produced by entmax: nonnegative, sums to one, nonempty support.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Indices with probability above [`SUPPORT_EPS`].
    pub fn support(&self) -> Vec<usize> {
        support_of(&self.0)
    }

    pub fn support_mask(&self) -> Vec<bool> {
        self.0.iter().map(|&p| p > SUPPORT_EPS).collect()
    }
}

impl std::ops::Index<usize> for ProbVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub fn support_of(p: &[f64]) -> Vec<usize> {
    p.iter()
        .enumerate()
        .filter(|(_, &v)| v > SUPPORT_EPS)
        .map(|(j, _)| j)
        .collect()
}

fn check_scores(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::domain("entmax of an empty score vector"));
    }
    if let Some(j) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::domain(format!("score {j} is not finite ({})", z[j])));
    }
    Ok(())
}

/// Computes α-entmax of `z`.
pub fn entmax(z: &[f64], params: &EntmaxParams) -> Result<ProbVector> {
    params.validate()?;
    check_scores(z)?;
    let alpha = params.alpha;
    let p = if alpha == 1.0 {
        softmax(z)
    } else {
        let tau = threshold_unchecked(z, params);
        let mut p = apply_threshold(z, alpha, tau);
        if alpha != 2.0 && alpha != 1.5 {
            // bisection leaves the sum off by at most bisection_tol
            let s: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= s);
        }
        p
    };
    Ok(ProbVector(p))
}

/// Returns τ(z) such that Σ_j [(α−1) z_j − τ]₊^(1/(α−1)) = 1.
pub fn entmax_tau(z: &[f64], params: &EntmaxParams) -> Result<f64> {
    params.validate()?;
    check_scores(z)?;
    if params.alpha == 1.0 {
        return Err(Error::domain(
            "softmax (alpha = 1) has full support and no finite threshold",
        ));
    }
    Ok(threshold_unchecked(z, params))
}

/// General-α solver by bisection on τ, regardless of whether a closed form exists.
pub fn entmax_bisect(z: &[f64], params: &EntmaxParams) -> Result<ProbVector> {
    params.validate()?;
    check_scores(z)?;
    if params.alpha == 1.0 {
        return Ok(ProbVector(softmax(z)));
    }
    let tau = bisect_tau(z, params);
    let mut p = apply_threshold(z, params.alpha, tau);
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    Ok(ProbVector(p))
}

/// Entmax over the positions where `mask` is set; everything else gets exactly zero.
pub fn masked_entmax(z: &[f64], mask: &[bool], params: &EntmaxParams) -> Result<ProbVector> {
    if mask.len() != z.len() {
        return Err(Error::domain(format!(
            "mask length {} does not match score length {}",
            mask.len(),
            z.len()
        )));
    }
    let kept: Vec<f64> = z
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .collect();
    if kept.is_empty() {
        return Err(Error::domain("mask selects no positions"));
    }
    let sub = entmax(&kept, params)?;
    let mut out = vec![0.0; z.len()];
    let mut it = sub.0.into_iter();
    for (o, &m) in out.iter_mut().zip(mask) {
        if m {
            *o = it.next().unwrap_or(0.0);
        }
    }
    Ok(ProbVector(out))
}

/// Checks that restricting `z` to `mask` leaves entmax unchanged.
///
/// `mask` must cover the support of `entmax(z)`; otherwise a
/// [`Error::Contract`] is returned. Under that precondition the answer is
/// always `true` up to floating-point noise below [`CONSISTENCY_TOL`].
pub fn verify_sparse_consistency(z: &[f64], mask: &[bool], params: &EntmaxParams) -> Result<bool> {
    let full = entmax(z, params)?;
    if mask.len() != z.len() {
        return Err(Error::domain(format!(
            "mask length {} does not match score length {}",
            mask.len(),
            z.len()
        )));
    }
    if let Some(j) = full.support().into_iter().find(|&j| !mask[j]) {
        return Err(Error::Contract(format!(
            "mask does not dominate the support: position {j} has p = {} but is masked out",
            full[j]
        )));
    }
    let masked = masked_entmax(z, mask, params)?;
    Ok(max_abs_diff(full.as_slice(), masked.as_slice()) <= CONSISTENCY_TOL)
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

fn apply_threshold(z: &[f64], alpha: f64, tau: f64) -> Vec<f64> {
    let am1 = alpha - 1.0;
    let expo = 1.0 / am1;
    z.iter()
        .map(|&v| {
            let x = am1 * v - tau;
            if x > 0.0 {
                if alpha == 2.0 {
                    x
                } else if alpha == 1.5 {
                    x * x
                } else {
                    x.powf(expo)
                }
            } else {
                0.0
            }
        })
        .collect()
}

fn threshold_unchecked(z: &[f64], params: &EntmaxParams) -> f64 {
    if params.alpha == 2.0 {
        sparsemax_tau(z)
    } else if params.alpha == 1.5 {
        entmax15_tau(z)
    } else {
        bisect_tau(z, params)
    }
}

fn sorted_desc(x: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut u: Vec<f64> = x.collect();
    u.sort_by(|a, b| b.total_cmp(a));
    u
}

fn sparsemax_tau(z: &[f64]) -> f64 {
    let u = sorted_desc(z.iter().copied());
    let mut cumsum = 0.0;
    let mut tau = u[0] - 1.0;
    for (i, &v) in u.iter().enumerate() {
        cumsum += v;
        let k = (i + 1) as f64;
        if 1.0 + k * v > cumsum {
            tau = (cumsum - 1.0) / k;
        } else {
            break;
        }
    }
    tau
}

/// Exact threshold for α = 1.5 on x = z / 2. For each candidate support size k
/// the threshold solving Σ_{j≤k} (x_j − τ)² = 1 is
/// τ_k = mean_k − sqrt((1 − k (meansq_k − mean_k²)) / k); the support is the
/// largest k whose τ_k stays below the k-th largest entry.
fn entmax15_tau(z: &[f64]) -> f64 {
    let u = sorted_desc(z.iter().map(|&v| v / 2.0));
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut tau_star = u[0] - 1.0;
    for (i, &v) in u.iter().enumerate() {
        sum += v;
        sum_sq += v * v;
        let k = (i + 1) as f64;
        let mean = sum / k;
        let mean_sq = sum_sq / k;
        let delta = (1.0 - k * (mean_sq - mean * mean)) / k;
        let tau = mean - delta.max(0.0).sqrt();
        if tau <= v {
            tau_star = tau;
        } else {
            break;
        }
    }
    tau_star
}

fn bisect_tau(z: &[f64], params: &EntmaxParams) -> f64 {
    let am1 = params.alpha - 1.0;
    let expo = 1.0 / am1;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max) * am1;
    let mass = |tau: f64| -> f64 {
        z.iter()
            .map(|&v| {
                let x = am1 * v - tau;
                if x > 0.0 {
                    x.powf(expo)
                } else {
                    0.0
                }
            })
            .sum()
    };
    // mass(lo) >= 1 because the max entry alone contributes 1; mass(hi) = 0
    let mut lo = max - 1.0;
    let mut hi = max;
    let mut mid = lo;
    for _ in 0..params.bisection_max_iter {
        mid = 0.5 * (lo + hi);
        let f = mass(mid) - 1.0;
        if f.abs() <= params.bisection_tol {
            break;
        }
        if f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    mid
}

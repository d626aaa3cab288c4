//! Off-policy value estimators: Gaussian-kernel importance sampling (plain or
//! with per-sample metric transforms) and the discretized-action baseline.

use alloc::vec;
use alloc::vec::Vec;

use crate::metric::{regularized_metric, transform_matrix};
use crate::numerics::{gaussian_kernel_from_sq_norm, pairwise_sum, SquareMatrix, SymMatrix};
use crate::policies::{BehaviorPolicy, LoggedDataset, TargetPolicy};
use crate::reward_model::{hessians_at, RewardModel};
use crate::{Error, Result};

/// Kernel values below this are treated as exact zeros.
pub const KERNEL_UNDERFLOW: f64 = 1e-300;

/// Result of one estimator run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EstimatorReport {
    pub estimate: f64,
    /// Samples with a nonzero importance weight.
    pub n_used: usize,
    /// Kernel bandwidth; `None` for estimators without one.
    pub bandwidth: Option<f64>,
    pub self_normalized: bool,
    /// Sum of the raw importance weights `K(u_i) / pb_i` (or bin indicators
    /// over bin masses).
    pub weight_sum: f64,
    /// Largest single weight over `weight_sum`; 0 when nothing overlaps.
    pub max_weight_share: f64,
    pub metric_applied: bool,
    /// Delta-method standard error of `estimate`.
    pub std_error: f64,
}

/// Per-sample weights `w_i` and rewards, reduced into a report. `scale` is
/// the unnormalized prefactor applied to each `w_i r_i` term.
fn reduce(
    weights: &[f64],
    rewards: &[f64],
    scale: f64,
    self_normalize: bool,
) -> Result<EstimatorReport> {
    let n = weights.len();
    let weight_sum = pairwise_sum(weights);
    let max_w = weights.iter().fold(0.0f64, |m, w| m.max(*w));
    let n_used = weights.iter().filter(|w| **w > 0.0).count();
    let terms: Vec<f64> = weights.iter().zip(rewards).map(|(w, r)| w * r).collect();

    let (estimate, std_error) = if self_normalize {
        if !(weight_sum > 0.0) {
            return Err(Error::EmptyOverlap { weight_sum });
        }
        // Centering on the smallest contributing reward makes constant
        // rewards come back exactly and keeps the estimate >= that minimum.
        let base = weights
            .iter()
            .zip(rewards)
            .filter(|(w, _)| **w > 0.0)
            .fold(f64::INFINITY, |m, (_, r)| m.min(*r));
        let centered: Vec<f64> = weights
            .iter()
            .zip(rewards)
            .map(|(w, r)| if *w > 0.0 { w * (r - base) } else { 0.0 })
            .collect();
        let top = weights
            .iter()
            .zip(rewards)
            .filter(|(w, _)| **w > 0.0)
            .fold(f64::NEG_INFINITY, |m, (_, r)| m.max(*r));
        // The exact weighted mean lies in [base, top]; rounding may not.
        let est = (base + pairwise_sum(&centered) / weight_sum).clamp(base, top);
        let dev: Vec<f64> = weights
            .iter()
            .zip(rewards)
            .map(|(w, r)| {
                let t = w * (r - est);
                t * t
            })
            .collect();
        (est, libm::sqrt(pairwise_sum(&dev)) / weight_sum)
    } else {
        let est = scale * pairwise_sum(&terms);
        let mean_term = est;
        let dev: Vec<f64> = terms
            .iter()
            .map(|t| {
                let x = scale * n as f64 * t - mean_term;
                x * x
            })
            .collect();
        (
            est,
            libm::sqrt(pairwise_sum(&dev) / n as f64) / libm::sqrt(n as f64),
        )
    };

    Ok(EstimatorReport {
        estimate,
        n_used,
        bandwidth: None,
        self_normalized: self_normalize,
        weight_sum,
        max_weight_share: if weight_sum > 0.0 {
            max_w / weight_sum
        } else {
            0.0
        },
        metric_applied: false,
        std_error,
    })
}

/// Gaussian-kernel IS estimate of the target policy's value.
///
/// With `transforms`, sample `i` uses kernel input `L_i^T (a_i - pi(s_i)) / h`;
/// identity matrices are skipped so they reproduce the plain estimate
/// bit-for-bit. The unnormalized form divides by `N h^D`; the self-normalized
/// form divides by the weight sum instead.
pub fn kernel_is(
    data: &LoggedDataset,
    target: &TargetPolicy,
    h: f64,
    self_normalize: bool,
    transforms: Option<&[SquareMatrix]>,
) -> Result<EstimatorReport> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(alloc::format!(
            "bandwidth must be positive, got {h}"
        )));
    }
    let n = data.len();
    let d = data.action_dim();
    if let Some(ls) = transforms {
        if ls.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: ls.len(),
            });
        }
        if let Some(bad) = ls.iter().find(|l| l.dim() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: bad.dim(),
            });
        }
    }
    let targets = target.act_on_dataset(data)?;
    let mut diff = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let a = data.action(i);
        let t = &targets[i * d..(i + 1) * d];
        for k in 0..d {
            diff[k] = a[k] - t[k];
        }
        let u: &[f64] = match transforms {
            Some(ls) if !ls[i].is_identity() => {
                ls[i].transpose_mul_vec(&diff, &mut z);
                &z
            }
            _ => &diff,
        };
        let sq: f64 = u.iter().map(|x| (x / h) * (x / h)).sum();
        let k = gaussian_kernel_from_sq_norm(sq, d);
        let k = if k < KERNEL_UNDERFLOW { 0.0 } else { k };
        weights[i] = k / data.behavior_density()[i];
    }
    let scale = 1.0 / (n as f64 * libm::pow(h, d as f64));
    let mut report = reduce(&weights, data.rewards(), scale, self_normalize)?;
    report.bandwidth = Some(h);
    report.metric_applied = transforms.is_some();
    Ok(report)
}

/// Kernel-input transforms `L_i` from per-sample reward Hessians.
pub fn transforms_from_hessians(hessians: &[SymMatrix]) -> Result<Vec<SquareMatrix>> {
    hessians
        .iter()
        .map(|h| regularized_metric(h).and_then(|m| transform_matrix(&m)))
        .collect()
}

/// Action Hessians of the model's mean at `(s_i, pi(s_i))` for every sample.
pub fn target_hessians(
    model: &RewardModel,
    data: &LoggedDataset,
    target: &TargetPolicy,
) -> Result<Vec<SymMatrix>> {
    let targets = target.act_on_dataset(data)?;
    hessians_at(model, data.states(), &targets, data.len())
}

/// Kernel IS with a locally learned metric at every logged state.
pub fn kmis_estimate(
    data: &LoggedDataset,
    target: &TargetPolicy,
    model: &RewardModel,
    h: f64,
    self_normalize: bool,
) -> Result<EstimatorReport> {
    let hessians = target_hessians(model, data, target)?;
    let transforms = transforms_from_hessians(&hessians)?;
    kernel_is(data, target, h, self_normalize, Some(&transforms))
}

/// Importance sampling after discretizing actions into `bins_per_dim` equal
/// intervals per dimension over the observed action box.
///
/// A sample counts when its action shares a bin with the target action
/// (targets outside the box are clamped into the edge bins) and is weighted
/// by the inverse behavior probability of that bin.
pub fn discretized_is(
    data: &LoggedDataset,
    target: &TargetPolicy,
    behavior: &BehaviorPolicy,
    bins_per_dim: usize,
    self_normalize: bool,
) -> Result<EstimatorReport> {
    if bins_per_dim == 0 {
        return Err(Error::InvalidInput(
            "bins_per_dim must be at least 1".into(),
        ));
    }
    let n = data.len();
    let d = data.action_dim();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for i in 0..n {
        for (k, a) in data.action(i).iter().enumerate() {
            lo[k] = lo[k].min(*a);
            hi[k] = hi[k].max(*a);
        }
    }
    if let Some(k) = (0..d).find(|&k| !(hi[k] > lo[k])) {
        return Err(Error::InvalidInput(alloc::format!(
            "action dimension {k} has no spread; cannot discretize"
        )));
    }
    let width: Vec<f64> = (0..d)
        .map(|k| (hi[k] - lo[k]) / bins_per_dim as f64)
        .collect();
    let bin_of = |k: usize, x: f64| -> usize {
        let b = libm::floor((x - lo[k]) / width[k]);
        if b <= 0.0 {
            0
        } else {
            (b as usize).min(bins_per_dim - 1)
        }
    };

    let targets = target.act_on_dataset(data)?;
    let mut weights = vec![0.0; n];
    let mut bin = vec![(0.0, 0.0); d];
    for i in 0..n {
        let a = data.action(i);
        let t = &targets[i * d..(i + 1) * d];
        let matched = (0..d).all(|k| bin_of(k, a[k]) == bin_of(k, t[k]));
        if !matched {
            continue;
        }
        for k in 0..d {
            let b = bin_of(k, t[k]);
            let l = lo[k] + b as f64 * width[k];
            let u = if b + 1 == bins_per_dim {
                hi[k]
            } else {
                lo[k] + (b + 1) as f64 * width[k]
            };
            bin[k] = (l, u);
        }
        let mass = behavior.bin_mass(data.state(i), &bin)?;
        if !(mass > 0.0) {
            return Err(Error::InternalConsistency {
                index: i,
                value: mass,
            });
        }
        weights[i] = 1.0 / mass;
    }
    reduce(&weights, data.rewards(), 1.0 / n as f64, self_normalize)
}

//! Bandwidth selection: the closed-form minimizer of the leading-order MSE
//! with plug-in constants from a reward model, and a Lepski-style scan over
//! a geometric grid.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::numerics::{kernel_roughness, pairwise_sum, SymMatrix};
use crate::policies::{BehaviorPolicy, LoggedDataset, TargetPolicy};
use crate::reward_model::RewardModel;
use crate::{Error, Result};

/// Plug-in constants of `lomse(h) = h^4 c_b + c_v / (n h^d_a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LomseConstants {
    pub c_b: f64,
    pub c_v: f64,
    pub n: usize,
    pub d_a: usize,
}

/// Leading-order mean squared error of the kernel estimator at bandwidth `h`.
pub fn lomse(h: f64, k: &LomseConstants) -> f64 {
    let h4 = h * h * h * h;
    h4 * k.c_b + k.c_v / (k.n as f64 * libm::pow(h, k.d_a as f64))
}

/// `h* = (d_a c_v / (4 n c_b))^(1 / (d_a + 4))`.
pub fn optimal_bandwidth(k: &LomseConstants) -> Result<f64> {
    if k.c_b == 0.0 {
        return Err(Error::DegenerateBias);
    }
    if !(k.c_b > 0.0) || !(k.c_v > 0.0) || k.n == 0 || k.d_a == 0 {
        return Err(Error::InvalidInput(alloc::format!(
            "need c_b > 0, c_v > 0, n >= 1, d_a >= 1; got {k:?}"
        )));
    }
    let base = k.d_a as f64 * k.c_v / (4.0 * k.n as f64 * k.c_b);
    Ok(libm::pow(base, 1.0 / (k.d_a as f64 + 4.0)))
}

/// `(1/4) * (mean_i tr H_i)^2`: the mean is taken before squaring.
pub fn cb_from_hessians(hessians: &[SymMatrix]) -> f64 {
    if hessians.is_empty() {
        return 0.0;
    }
    let traces: Vec<f64> = hessians.iter().map(SymMatrix::trace).collect();
    let m = pairwise_sum(&traces) / traces.len() as f64;
    0.25 * m * m
}

/// Bias constant from the model's action Hessians at the target actions.
pub fn estimate_cb(
    model: &RewardModel,
    data: &LoggedDataset,
    target: &TargetPolicy,
) -> Result<f64> {
    let hs = crate::estimators::target_hessians(model, data, target)?;
    Ok(cb_from_hessians(&hs))
}

/// `R(K) * mean_i E[r^2 | s_i, pi(s_i)] / pb(pi(s_i) | s_i)` with the clipped
/// behavior density.
///
/// States whose target action has zero behavior density (outside the support
/// of an unclipped policy) are left out of the mean; their term is infinite
/// and the kernel estimate there only sees logged actions at the support
/// boundary.
pub fn estimate_cv(
    model: &RewardModel,
    data: &LoggedDataset,
    target: &TargetPolicy,
    behavior: &BehaviorPolicy,
) -> Result<f64> {
    let ds = data.state_dim();
    let da = data.action_dim();
    let n = data.len();
    let targets = target.act_on_dataset(data)?;
    let mut raw = alloc::vec![0.0; n * (ds + da)];
    for i in 0..n {
        let row = &mut raw[i * (ds + da)..(i + 1) * (ds + da)];
        row[..ds].copy_from_slice(data.state(i));
        row[ds..].copy_from_slice(&targets[i * da..(i + 1) * da]);
    }
    let preds = model.predict_batch(&raw, n)?;
    let mut ratios = Vec::with_capacity(n);
    for (i, (mean, var)) in preds.iter().enumerate() {
        let pb = behavior.density(data.state(i), &targets[i * da..(i + 1) * da])?;
        if pb > 0.0 {
            ratios.push((mean * mean + var) / pb);
        }
    }
    if ratios.is_empty() {
        return Err(Error::InvalidInput(
            "no target action lies inside the behavior support".into(),
        ));
    }
    Ok(kernel_roughness(da) * pairwise_sum(&ratios) / ratios.len() as f64)
}

/// Strictly descending positive bandwidths.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<f64>", into = "Vec<f64>"))]
pub struct BandwidthGrid {
    values: Vec<f64>,
}

impl BandwidthGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("bandwidth grid is empty".into()));
        }
        if values.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
            return Err(Error::InvalidInput(
                "bandwidths must be finite and positive".into(),
            ));
        }
        if values.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::InvalidInput(
                "bandwidth grid must be strictly descending".into(),
            ));
        }
        Ok(Self { values })
    }

    /// `{2^-i : i in first..=last}`, largest first.
    pub fn powers_of_two(first: i32, last: i32) -> Result<Self> {
        if first > last {
            return Err(Error::InvalidInput(alloc::format!(
                "empty exponent range {first}..={last}"
            )));
        }
        Self::new(
            (first..=last)
                .map(|i| libm::pow(2.0, -(i as f64)))
                .collect(),
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Middle element; for an even count, the larger of the two middles.
    pub fn median(&self) -> f64 {
        self.values[(self.values.len() - 1) / 2]
    }
}

impl TryFrom<Vec<f64>> for BandwidthGrid {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BandwidthGrid> for Vec<f64> {
    fn from(g: BandwidthGrid) -> Self {
        g.values
    }
}

/// Parses `"2^-1..2^-7"` (powers of two, inclusive) or a comma-separated list.
impl FromStr for BandwidthGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidInput(alloc::format!("cannot parse bandwidth grid {s:?}"));
        if let Some((a, b)) = s.split_once("..") {
            let exp = |t: &str| -> Result<i32> {
                let t = t.trim().strip_prefix("2^").ok_or_else(bad)?;
                let t = t.trim_start_matches('(').trim_end_matches(')');
                let v: i32 = t.parse().map_err(|_| bad())?;
                Ok(-v)
            };
            return Self::powers_of_two(exp(a)?, exp(b)?);
        }
        let values = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(values)
    }
}

impl fmt::Display for BandwidthGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// One grid point of a Lepski scan.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SlopePoint {
    pub bandwidth: f64,
    /// `None` when the estimator failed at this bandwidth.
    pub estimate: Option<f64>,
    /// Interval half-width, `2 * std_error`.
    pub width: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SlopeSelection {
    pub bandwidth: f64,
    pub points: Vec<SlopePoint>,
}

/// Lepski-style selection. Walks the grid from the largest bandwidth down,
/// accepting `h_j` while its interval `estimate +- 2 std_error` intersects
/// the interval of every previously accepted bandwidth, and returns the last
/// accepted one. Failures before the first acceptance are skipped; a failure
/// or a non-intersecting interval after it ends the scan.
///
/// `estimator` returns `(estimate, std_error)` for one bandwidth.
pub fn slope_select<F>(grid: &BandwidthGrid, mut estimator: F) -> Result<SlopeSelection>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    let mut points = Vec::with_capacity(grid.len());
    let mut accepted: Vec<(f64, f64)> = Vec::new();
    let mut selected = None;
    let mut stopped = false;
    for &h in grid.values() {
        let mut point = SlopePoint {
            bandwidth: h,
            estimate: None,
            width: None,
            accepted: false,
        };
        if !stopped {
            match estimator(h) {
                Ok((est, se)) if est.is_finite() && se.is_finite() => {
                    let w = 2.0 * se.abs();
                    point.estimate = Some(est);
                    point.width = Some(w);
                    if accepted.iter().all(|(e, wi)| (est - e).abs() <= w + wi) {
                        accepted.push((est, w));
                        point.accepted = true;
                        selected = Some(h);
                    } else {
                        stopped = true;
                    }
                }
                _ => stopped = selected.is_some(),
            }
        }
        points.push(point);
    }
    match selected {
        Some(bandwidth) => Ok(SlopeSelection { bandwidth, points }),
        None => Err(Error::SelectionFailed),
    }
}

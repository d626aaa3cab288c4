//! Local Mahalanobis metrics built from the eigenstructure of a reward
//! Hessian, and the linear transform that applies them to kernel inputs.
//!
//! For a Hessian with eigenpairs `(lambda_k, u_k)`, positive count `d+` and
//! negative count `d-`, the metric weighs direction `u_k` by `d+ * lambda_k`
//! when `lambda_k > 0` and by `d- * |lambda_k|` when `lambda_k < 0`, then
//! rescales to unit determinant. Along such a metric the positive and
//! negative curvature contributions to the kernel bias cancel.

use alloc::vec::Vec;

use crate::numerics::{
    sym_eig, EigenDecomposition, Sign, SquareMatrix, SymMatrix, DEFAULT_ZERO_TOL_REL,
};
use crate::{Error, Result};

/// Ridge size relative to the largest absolute eigenvalue.
pub const RIDGE_FRACTION: f64 = 0.01;

/// Regularized, unit-determinant metric for one state, with its factor data.
#[derive(Debug, Clone, PartialEq)]
pub struct StateMetric {
    a_hat: SymMatrix,
    basis: SquareMatrix,
    weights: Vec<f64>,
    beta: f64,
    gamma: f64,
    epsilon: f64,
    degenerate: bool,
}

impl StateMetric {
    /// The isotropic fallback.
    pub fn identity(dim: usize) -> Result<Self> {
        Ok(Self {
            a_hat: SymMatrix::identity(dim)?,
            basis: SquareMatrix::identity(dim)?,
            weights: alloc::vec![0.0; dim],
            beta: 1.0,
            gamma: 1.0,
            epsilon: 0.0,
            degenerate: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.a_hat.dim()
    }

    pub fn a_hat(&self) -> &SymMatrix {
        &self.a_hat
    }

    /// Eigenvectors of the Hessian, as columns.
    pub fn basis(&self) -> &SquareMatrix {
        &self.basis
    }

    /// Unscaled block weights `d+ lambda`, `-d- lambda` or `0` per basis column.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Eigenvalues of `a_hat` along `basis`: `beta * weight + gamma`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.weights
            .iter()
            .map(|w| self.beta * w + self.gamma)
            .collect()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }
}

/// `sqrt((a - b)^T A (a - b))`. Rejects metrics that are not positive definite.
pub fn mahalanobis_distance(a: &[f64], b: &[f64], metric: &SymMatrix) -> Result<f64> {
    let d = metric.dim();
    if a.len() != d || b.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if a.len() != d { a.len() } else { b.len() },
        });
    }
    let eig = sym_eig(metric, DEFAULT_ZERO_TOL_REL)?;
    if eig.positive_count != d {
        return Err(Error::InvalidInput(
            "metric is not positive definite".into(),
        ));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(libm::sqrt(metric.quadratic_form(&diff).max(0.0)))
}

fn block_weights(eig: &EigenDecomposition) -> Vec<f64> {
    let dp = eig.positive_count as f64;
    let dn = eig.negative_count as f64;
    (0..eig.dim())
        .map(|k| match eig.sign(k) {
            Sign::Positive => dp * eig.eigenvalues[k],
            Sign::Negative => -dn * eig.eigenvalues[k],
            Sign::Zero => 0.0,
        })
        .collect()
}

/// `exp(-mean(ln v))` over the given positive values.
fn inverse_geometric_mean<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for v in values {
        acc += libm::log(*v);
        n += 1;
    }
    libm::exp(-acc / n as f64)
}

/// Closed-form bias-optimal metric over the nonzero eigenspace of `hessian`.
///
/// Zero-eigenvalue directions get weight 0, so the result is singular when
/// the Hessian is; its determinant is 1 on the nonzero eigenspace.
pub fn optimal_metric(hessian: &SymMatrix) -> Result<SymMatrix> {
    let eig = sym_eig(hessian, DEFAULT_ZERO_TOL_REL)?;
    if eig.positive_count + eig.negative_count == 0 {
        return Err(Error::DegenerateHessian);
    }
    let w = block_weights(&eig);
    let alpha = inverse_geometric_mean(w.iter().filter(|v| **v > 0.0));
    let scaled: Vec<f64> = w.iter().map(|v| alpha * v).collect();
    SymMatrix::from_spectrum(&eig.eigenvectors, &scaled)
}

/// Regularized metric: block weights plus a ridge of 1% of the spectral
/// radius, scaled to unit determinant. An all-zero Hessian yields the
/// identity with the degenerate flag set.
pub fn regularized_metric(hessian: &SymMatrix) -> Result<StateMetric> {
    let eig = sym_eig(hessian, DEFAULT_ZERO_TOL_REL)?;
    if eig.positive_count + eig.negative_count == 0 {
        return StateMetric::identity(hessian.dim());
    }
    let weights = block_weights(&eig);
    let epsilon = RIDGE_FRACTION * eig.max_abs_eigenvalue();
    let y: Vec<f64> = weights.iter().map(|w| w + epsilon).collect();
    let beta = inverse_geometric_mean(y.iter());
    let spectrum: Vec<f64> = y.iter().map(|v| beta * v).collect();
    Ok(StateMetric {
        a_hat: SymMatrix::from_spectrum(&eig.eigenvectors, &spectrum)?,
        basis: eig.eigenvectors,
        weights,
        beta,
        gamma: beta * epsilon,
        epsilon,
        degenerate: false,
    })
}

/// Factor `L` with `L L^T = a_hat`: the basis with columns scaled by
/// `sqrt(beta * weight + gamma)`. Kernel inputs become `L^T (a - pi(s))`.
pub fn transform_matrix(metric: &StateMetric) -> Result<SquareMatrix> {
    let d = metric.dim();
    if metric.degenerate {
        return SquareMatrix::identity(d);
    }
    let mut l = metric.basis.clone();
    for (k, w) in metric.weights.iter().enumerate() {
        let v = metric.beta * w + metric.gamma;
        if !(v >= 0.0) {
            return Err(Error::InternalConsistency { index: k, value: v });
        }
        let s = libm::sqrt(v);
        for i in 0..d {
            l.set(i, k, l.get(i, k) * s);
        }
    }
    Ok(l)
}

/// One eigendirection's share of the squared optimal-metric distance.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DistanceTerm {
    pub eigenvalue: f64,
    /// `u_k^T (a - target)`.
    pub projection: f64,
    /// `alpha * d_pm * |lambda_k| * projection^2`.
    pub contribution: f64,
}

/// Splits `||a - target||^2` under the optimal metric into per-eigendirection
/// terms over the nonzero spectrum. The contributions sum to the squared
/// distance.
pub fn metric_distance_decomposition(
    a: &[f64],
    target: &[f64],
    hessian: &SymMatrix,
) -> Result<Vec<DistanceTerm>> {
    let d = hessian.dim();
    if a.len() != d || target.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if a.len() != d { a.len() } else { target.len() },
        });
    }
    let eig = sym_eig(hessian, DEFAULT_ZERO_TOL_REL)?;
    if eig.positive_count + eig.negative_count == 0 {
        return Err(Error::DegenerateHessian);
    }
    let w = block_weights(&eig);
    let alpha = inverse_geometric_mean(w.iter().filter(|v| **v > 0.0));
    let diff: Vec<f64> = a.iter().zip(target).map(|(x, y)| x - y).collect();
    let mut out = Vec::new();
    for (k, wk) in w.iter().enumerate() {
        if *wk == 0.0 {
            continue;
        }
        let projection: f64 = (0..d).map(|i| eig.eigenvectors.get(i, k) * diff[i]).sum();
        out.push(DistanceTerm {
            eigenvalue: eig.eigenvalues[k],
            projection,
            contribution: alpha * wk * projection * projection,
        });
    }
    Ok(out)
}

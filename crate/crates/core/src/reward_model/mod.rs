//! Direct-method reward regressor: a small feed-forward network with a
//! Gaussian output head, its training loop, and action Hessians of the
//! predicted mean.

mod hessian;
mod network;
mod train;

use alloc::vec;
use alloc::vec::Vec;

pub use hessian::{fd_hessian, fd_step, hessians_at};
pub use train::{fit, validation_rows};

use crate::numerics::SymMatrix;
use crate::policies::TargetPolicy;
use crate::{Error, Result};
use network::{Network, Workspace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardConfig {
    pub learning_rate: f64,
    /// Dropout rate after each hidden layer during training.
    pub dropout: f64,
    /// Coefficient of the squared-weight penalty on the hidden layers.
    pub l2: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub hidden: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self::synthetic()
    }
}

impl RewardConfig {
    /// Dropout 0.5, no weight penalty.
    pub fn synthetic() -> Self {
        Self {
            learning_rate: 5e-4,
            dropout: 0.5,
            l2: 0.0,
            patience: 20,
            max_epochs: 1000,
            batch_size: 256,
            validation_fraction: 0.2,
            hidden: 128,
        }
    }

    /// No dropout, weight penalty 0.1.
    pub fn warfarin() -> Self {
        Self {
            dropout: 0.0,
            l2: 0.1,
            ..Self::synthetic()
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.dropout)
            && self.l2 >= 0.0
            && self.patience >= 1
            && self.max_epochs >= 1
            && self.batch_size >= 1
            && self.validation_fraction > 0.0
            && self.validation_fraction < 1.0
            && self.hidden >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(alloc::format!(
                "invalid reward config {self:?}"
            )))
        }
    }
}

/// Summary of one training run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    /// Validation NLL of the initial weights (epoch 0).
    pub initial_validation_nll: f64,
    pub best_validation_nll: f64,
    pub train_size: usize,
    pub validation_size: usize,
    pub seed: u64,
}

/// Standardization of one input or target coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Standardizer {
    pub mean: f64,
    pub scale: f64,
}

impl Standardizer {
    pub(crate) fn fit(values: impl Iterator<Item = f64>) -> Self {
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        for v in values {
            n += 1.0;
            let delta = v - mean;
            mean += delta / n;
            m2 += delta * (v - mean);
        }
        let var = if n > 0.0 { m2 / n } else { 0.0 };
        let sd = libm::sqrt(var);
        Self {
            mean,
            scale: if sd > 1e-12 { sd } else { 1.0 },
        }
    }

    #[inline]
    pub(crate) fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.scale
    }
}

/// Trained reward regressor `r_phi(s, a)` with a Gaussian head.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RewardModel {
    state_dim: usize,
    action_dim: usize,
    config: RewardConfig,
    inputs: Vec<Standardizer>,
    target: Standardizer,
    network: Option<Network>,
}

impl RewardModel {
    /// An unfitted model; prediction fails until [`fit`] has produced weights.
    pub fn unfitted(state_dim: usize, action_dim: usize, config: RewardConfig) -> Self {
        Self {
            state_dim,
            action_dim,
            config,
            inputs: vec![
                Standardizer {
                    mean: 0.0,
                    scale: 1.0
                };
                state_dim + action_dim
            ],
            target: Standardizer {
                mean: 0.0,
                scale: 1.0,
            },
            network: None,
        }
    }

    /// A model predicting `mean` and `variance` everywhere; its Hessians
    /// vanish exactly. Useful as a reward oracle for flat reward surfaces.
    pub fn constant(state_dim: usize, action_dim: usize, mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() || !(variance > 0.0) || !variance.is_finite() {
            return Err(Error::InvalidInput(
                "constant model needs a finite mean and positive variance".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Network::new(state_dim + action_dim, 4, &mut rng);
        for w in net.layers[2].w.iter_mut() {
            *w = 0.0;
        }
        net.layers[2].b = vec![mean, libm::log(variance)];
        let mut m = Self::unfitted(state_dim, action_dim, RewardConfig::synthetic());
        m.network = Some(net);
        Ok(m)
    }

    pub fn is_fitted(&self) -> bool {
        self.network.is_some()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn config(&self) -> &RewardConfig {
        &self.config
    }

    fn net(&self) -> Result<&Network> {
        self.network.as_ref().ok_or(Error::NotFitted)
    }

    fn check(&self, s: &[f64], a: &[f64]) -> Result<()> {
        if s.len() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                got: s.len(),
            });
        }
        if a.len() != self.action_dim {
            return Err(Error::DimensionMismatch {
                expected: self.action_dim,
                got: a.len(),
            });
        }
        Ok(())
    }

    fn encode_into(&self, s: &[f64], a: &[f64], out: &mut [f64]) {
        for (k, v) in s.iter().chain(a.iter()).enumerate() {
            out[k] = self.inputs[k].apply(*v);
        }
    }

    /// Mean and variance in reward units for `rows` raw `(s, a)` inputs laid
    /// out row-major (`state_dim + action_dim` per row).
    pub fn predict_batch(&self, raw: &[f64], rows: usize) -> Result<Vec<(f64, f64)>> {
        let net = self.net()?;
        let width = self.state_dim + self.action_dim;
        if raw.len() != rows * width {
            return Err(Error::DimensionMismatch {
                expected: rows * width,
                got: raw.len(),
            });
        }
        let mut x = vec![0.0; raw.len()];
        for (xr, rr) in x.chunks_exact_mut(width).zip(raw.chunks_exact(width)) {
            for (k, (xo, v)) in xr.iter_mut().zip(rr).enumerate() {
                *xo = self.inputs[k].apply(*v);
            }
        }
        let mut out = vec![0.0; rows * 2];
        let mut ws = Workspace::default();
        net.predict(&x, rows, &mut ws, &mut out);
        Ok(out
            .chunks_exact(2)
            .map(|o| {
                let mean = self.target.mean + self.target.scale * o[0];
                let var = self.target.scale * self.target.scale * libm::exp(o[1]);
                (mean, var)
            })
            .collect())
    }

    fn predict_one(&self, s: &[f64], a: &[f64]) -> Result<(f64, f64)> {
        self.check(s, a)?;
        let mut raw = Vec::with_capacity(s.len() + a.len());
        raw.extend_from_slice(s);
        raw.extend_from_slice(a);
        Ok(self.predict_batch(&raw, 1)?[0])
    }

    /// `E[r | s, a]`.
    pub fn predict_mean(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(self.predict_one(s, a)?.0)
    }

    pub fn predict_variance(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(self.predict_one(s, a)?.1)
    }

    /// `E[r^2 | s, a] = mu^2 + sigma^2`.
    pub fn predict_second_moment(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let (m, v) = self.predict_one(s, a)?;
        Ok(second_moment(m, v))
    }

    /// Gradient of the predicted mean with respect to `(s, a)` by
    /// backpropagation.
    pub fn mean_gradient(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        self.check(s, a)?;
        let net = self.net()?;
        let mut x = vec![0.0; s.len() + a.len()];
        self.encode_into(s, a, &mut x);
        let g = net.mean_input_gradient(&x);
        Ok(g.iter()
            .enumerate()
            .map(|(k, gk)| gk * self.target.scale / self.inputs[k].scale)
            .collect())
    }

    /// Central finite-difference action Hessian of the predicted mean.
    pub fn hessian_at(&self, s: &[f64], a: &[f64]) -> Result<SymMatrix> {
        self.check(s, a)?;
        self.net()?;
        let mut out = hessians_at(self, s, a, 1)?;
        Ok(out.pop().expect("one hessian requested"))
    }
}

#[inline]
pub(crate) fn second_moment(mean: f64, var: f64) -> f64 {
    mean * mean + var
}

/// Direct-method estimate: mean predicted reward at `(s, pi(s))` over the
/// rows of `states` (row-major, `model.state_dim()` per row).
pub fn dm_estimate(model: &RewardModel, states: &[f64], target: &TargetPolicy) -> Result<f64> {
    let ds = model.state_dim();
    if states.is_empty() {
        return Err(Error::InvalidInput("no states to evaluate".into()));
    }
    if !states.len().is_multiple_of(ds) {
        return Err(Error::DimensionMismatch {
            expected: ds,
            got: states.len() % ds,
        });
    }
    let rows = states.len() / ds;
    let da = model.action_dim();
    let mut raw = vec![0.0; rows * (ds + da)];
    for (r, s) in states.chunks_exact(ds).enumerate() {
        let row = &mut raw[r * (ds + da)..(r + 1) * (ds + da)];
        row[..ds].copy_from_slice(s);
        target.act_into(s, &mut row[ds..])?;
    }
    let preds = model.predict_batch(&raw, rows)?;
    let means: Vec<f64> = preds.iter().map(|p| p.0).collect();
    Ok(crate::numerics::pairwise_sum(&means) / rows as f64)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Model whose network outputs a fixed `(mean, logvar)` everywhere.
    pub fn constant_model(
        state_dim: usize,
        action_dim: usize,
        mean: f64,
        logvar: f64,
    ) -> RewardModel {
        RewardModel::constant(state_dim, action_dim, mean, libm::exp(logvar)).unwrap()
    }

    /// Randomly initialised (untrained) model, used for gradient checks.
    pub fn random_model(state_dim: usize, action_dim: usize, seed: u64) -> RewardModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::new(state_dim + action_dim, 16, &mut rng);
        let mut m = RewardModel::unfitted(state_dim, action_dim, RewardConfig::synthetic());
        m.inputs = (0..state_dim + action_dim)
            .map(|k| Standardizer {
                mean: 0.1 * k as f64,
                scale: 0.5 + 0.25 * k as f64,
            })
            .collect();
        m.target = Standardizer {
            mean: -1.0,
            scale: 3.0,
        };
        m.network = Some(net);
        m
    }
}

#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn unfitted_model_refuses_to_predict() {
        let m = RewardModel::unfitted(2, 2, RewardConfig::synthetic());
        assert_eq!(
            m.predict_mean(&[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::NotFitted)
        );
        assert_eq!(
            m.hessian_at(&[0.0, 0.0], &[0.0, 0.0]),
            Err(Error::NotFitted)
        );
    }

    #[test]
    fn second_moment_of_head() {
        let m = constant_model(1, 1, 2.0, 0.0);
        assert_eq!(m.predict_mean(&[0.3], &[0.1]).unwrap(), 2.0);
        assert_eq!(m.predict_second_moment(&[0.3], &[0.1]).unwrap(), 5.0);
    }

    #[test]
    fn second_moment_dominates_squared_mean() {
        let m = random_model(2, 2, 4);
        for i in 0..20 {
            let x = i as f64 * 0.1 - 1.0;
            let s = [x, -x];
            let a = [0.5 * x, 1.0];
            let mu = m.predict_mean(&s, &a).unwrap();
            let m2 = m.predict_second_moment(&s, &a).unwrap();
            assert!(m2 - mu * mu >= 0.0);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = random_model(2, 2, 9);
        let s = [0.4, -0.2];
        let a = [0.1, 0.7];
        let g = m.mean_gradient(&s, &a).unwrap();
        let mut x: Vec<f64> = s.iter().chain(a.iter()).copied().collect();
        for k in 0..4 {
            let h = 1e-5;
            let orig = x[k];
            x[k] = orig + h;
            let fp = m.predict_mean(&x[..2], &x[2..]).unwrap();
            x[k] = orig - h;
            let fm = m.predict_mean(&x[..2], &x[2..]).unwrap();
            x[k] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (fd - g[k]).abs() <= 1e-4 * g[k].abs().max(1e-3),
                "{k}: {fd} vs {}",
                g[k]
            );
        }
    }

    #[test]
    fn dm_of_constant_model() {
        let m = constant_model(2, 2, 1.5, 0.0);
        let target = TargetPolicy::Affine {
            scale: 1.0,
            offset: vec![0.0, 0.0],
        };
        let states = [0.1, 0.2, -0.3, 0.9, 0.0, 0.0];
        assert_eq!(dm_estimate(&m, &states, &target).unwrap(), 1.5);
        assert!(dm_estimate(&m, &[], &target).is_err());
        let one = random_model(2, 2, 1);
        let s = [0.2, 0.3];
        let direct = one.predict_mean(&s, &s).unwrap();
        assert_eq!(dm_estimate(&one, &s, &target).unwrap(), direct);
    }
}

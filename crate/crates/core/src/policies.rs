//! Target and behavior policies, logged datasets and their generation.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::{normal_cdf, normal_pdf, normal_sf, TruncatedNormal};
use crate::{Error, Result};

type PolicyFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Deterministic state-to-action map being evaluated.
#[derive(Clone)]
pub enum TargetPolicy {
    /// `pi(s) = scale * s + offset`; requires `state_dim == action_dim`.
    Affine { scale: f64, offset: Vec<f64> },
    /// `pi(s) = (s[index], 0, ..., 0)`.
    Coordinate { index: usize, action_dim: usize },
    /// Same action for every state.
    Constant(Vec<f64>),
    /// Arbitrary deterministic map writing `action_dim` values.
    Custom {
        action_dim: usize,
        map: Arc<PolicyFn>,
    },
}

impl fmt::Debug for TargetPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Affine { scale, offset } => f
                .debug_struct("Affine")
                .field("scale", scale)
                .field("offset", offset)
                .finish(),
            Self::Coordinate { index, action_dim } => f
                .debug_struct("Coordinate")
                .field("index", index)
                .field("action_dim", action_dim)
                .finish(),
            Self::Constant(a) => f.debug_tuple("Constant").field(a).finish(),
            Self::Custom { action_dim, .. } => f
                .debug_struct("Custom")
                .field("action_dim", action_dim)
                .finish_non_exhaustive(),
        }
    }
}

impl TargetPolicy {
    pub fn custom<F>(action_dim: usize, map: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Self::Custom {
            action_dim,
            map: Arc::new(map),
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            Self::Affine { offset, .. } => offset.len(),
            Self::Coordinate { action_dim, .. } => *action_dim,
            Self::Constant(a) => a.len(),
            Self::Custom { action_dim, .. } => *action_dim,
        }
    }

    pub fn act_into(&self, s: &[f64], out: &mut [f64]) -> Result<()> {
        if out.len() != self.action_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.action_dim(),
                got: out.len(),
            });
        }
        match self {
            Self::Affine { scale, offset } => {
                if s.len() != offset.len() {
                    return Err(Error::DimensionMismatch {
                        expected: offset.len(),
                        got: s.len(),
                    });
                }
                for ((o, x), b) in out.iter_mut().zip(s).zip(offset) {
                    *o = scale * x + b;
                }
            }
            Self::Coordinate { index, .. } => {
                let v = *s.get(*index).ok_or(Error::DimensionMismatch {
                    expected: index + 1,
                    got: s.len(),
                })?;
                out.fill(0.0);
                out[0] = v;
            }
            Self::Constant(a) => out.copy_from_slice(a),
            Self::Custom { map, .. } => map(s, out),
        }
        Ok(())
    }

    pub fn act(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.action_dim()];
        self.act_into(s, &mut out)?;
        Ok(out)
    }

    /// Target actions for every state of `data`, row-major `N x D_A`.
    pub fn act_on_dataset(&self, data: &LoggedDataset) -> Result<Vec<f64>> {
        let d = self.action_dim();
        if d != data.action_dim() {
            return Err(Error::DimensionMismatch {
                expected: data.action_dim(),
                got: d,
            });
        }
        let mut out = vec![0.0; data.len() * d];
        for (i, chunk) in out.chunks_exact_mut(d).enumerate() {
            self.act_into(data.state(i), chunk)?;
        }
        Ok(out)
    }
}

/// Closed-form behavior policy families.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum BehaviorFamily {
    /// `N(mean_scale * s + mean_offset, sd^2 I)`.
    IsotropicGaussian {
        mean_scale: f64,
        mean_offset: Vec<f64>,
        sd: f64,
    },
    /// Uniform on the box `[lo_k, hi_k]`, independent of the state.
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    /// Two-dimensional dose policy: the first action is a normal with mean
    /// `base_mean + slope * s[state_index]` truncated to `[lo, hi]`, the
    /// second is uniform on `[lo, hi]`.
    DoseProduct {
        base_mean: f64,
        slope: f64,
        state_index: usize,
        sd: f64,
        lo: f64,
        hi: f64,
    },
}

/// Known stochastic logging policy with a lower clip on pointwise densities.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BehaviorPolicy {
    pub family: BehaviorFamily,
    pub clip_floor: f64,
}

impl BehaviorPolicy {
    pub fn new(family: BehaviorFamily, clip_floor: f64) -> Result<Self> {
        if !(clip_floor >= 0.0) || !clip_floor.is_finite() {
            return Err(Error::InvalidInput(format!(
                "clip floor must be finite and nonnegative, got {clip_floor}"
            )));
        }
        match &family {
            BehaviorFamily::IsotropicGaussian {
                sd, mean_offset, ..
            } => {
                if !(*sd > 0.0) || mean_offset.is_empty() {
                    return Err(Error::InvalidInput("gaussian behavior needs sd > 0".into()));
                }
            }
            BehaviorFamily::UniformBox { lo, hi } => {
                if lo.len() != hi.len() || lo.is_empty() {
                    return Err(Error::InvalidInput("uniform box bounds disagree".into()));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                    return Err(Error::InvalidInput("uniform box needs lo < hi".into()));
                }
            }
            BehaviorFamily::DoseProduct { sd, lo, hi, .. } => {
                if !(*sd > 0.0) || !(lo < hi) {
                    return Err(Error::InvalidInput(
                        "dose behavior needs sd > 0 and lo < hi".into(),
                    ));
                }
            }
        }
        Ok(Self { family, clip_floor })
    }

    pub fn action_dim(&self) -> usize {
        match &self.family {
            BehaviorFamily::IsotropicGaussian { mean_offset, .. } => mean_offset.len(),
            BehaviorFamily::UniformBox { lo, .. } => lo.len(),
            BehaviorFamily::DoseProduct { .. } => 2,
        }
    }

    fn check_action(&self, a: &[f64]) -> Result<()> {
        if a.len() != self.action_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.action_dim(),
                got: a.len(),
            });
        }
        Ok(())
    }

    fn gaussian_mean(&self, s: &[f64], k: usize) -> f64 {
        match &self.family {
            BehaviorFamily::IsotropicGaussian {
                mean_scale,
                mean_offset,
                ..
            } => mean_scale * s[k] + mean_offset[k],
            _ => unreachable!(),
        }
    }

    fn check_state(&self, s: &[f64]) -> Result<()> {
        let need = match &self.family {
            BehaviorFamily::IsotropicGaussian { mean_offset, .. } => mean_offset.len(),
            BehaviorFamily::UniformBox { .. } => 0,
            BehaviorFamily::DoseProduct { state_index, .. } => state_index + 1,
        };
        if s.len() < need {
            return Err(Error::DimensionMismatch {
                expected: need,
                got: s.len(),
            });
        }
        Ok(())
    }

    fn dose_law(&self, s: &[f64]) -> Result<(TruncatedNormal, f64, f64)> {
        match &self.family {
            BehaviorFamily::DoseProduct {
                base_mean,
                slope,
                state_index,
                sd,
                lo,
                hi,
            } => Ok((
                TruncatedNormal::new(base_mean + slope * s[*state_index], *sd, *lo, *hi)?,
                *lo,
                *hi,
            )),
            _ => unreachable!(),
        }
    }

    /// Unclipped density `pi_b(a | s)`.
    pub fn raw_density(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        self.check_action(a)?;
        self.check_state(s)?;
        Ok(match &self.family {
            BehaviorFamily::IsotropicGaussian { sd, .. } => {
                let mut p = 1.0;
                for (k, ak) in a.iter().enumerate() {
                    p *= normal_pdf((ak - self.gaussian_mean(s, k)) / sd) / sd;
                }
                p
            }
            BehaviorFamily::UniformBox { lo, hi } => {
                let inside = a
                    .iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(x, (l, h))| *x >= *l && *x <= *h);
                if inside {
                    lo.iter().zip(hi).map(|(l, h)| 1.0 / (h - l)).product()
                } else {
                    0.0
                }
            }
            BehaviorFamily::DoseProduct { .. } => {
                let (tn, lo, hi) = self.dose_law(s)?;
                let second = if a[1] >= lo && a[1] <= hi {
                    1.0 / (hi - lo)
                } else {
                    0.0
                };
                tn.density(a[0]) * second
            }
        })
    }

    /// Clipped density `max(pi_b(a | s), clip_floor)`.
    pub fn density(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        Ok(self.raw_density(s, a)?.max(self.clip_floor))
    }

    /// Exact behavior probability of the box `bin` given `s`. Not clipped.
    pub fn bin_mass(&self, s: &[f64], bin: &[(f64, f64)]) -> Result<f64> {
        self.check_action(&vec![0.0; bin.len()])?;
        self.check_state(s)?;
        if bin
            .iter()
            .any(|(l, h)| !(l < h) || !l.is_finite() || !h.is_finite())
        {
            return Err(Error::InvalidInput(
                "bin intervals must be finite and nonempty".into(),
            ));
        }
        Ok(match &self.family {
            BehaviorFamily::IsotropicGaussian { sd, .. } => {
                let mut p = 1.0;
                for (k, (l, h)) in bin.iter().enumerate() {
                    let m = self.gaussian_mean(s, k);
                    p *= std_normal_mass((l - m) / sd, (h - m) / sd);
                }
                p
            }
            BehaviorFamily::UniformBox { lo, hi } => {
                let mut p = 1.0;
                for ((l, h), (bl, bh)) in bin.iter().zip(lo.iter().zip(hi)) {
                    let overlap = (h.min(*bh) - l.max(*bl)).max(0.0);
                    p *= overlap / (bh - bl);
                }
                p
            }
            BehaviorFamily::DoseProduct { .. } => {
                let (tn, lo, hi) = self.dose_law(s)?;
                let (l, h) = bin[1];
                let overlap = (h.min(hi) - l.max(lo)).max(0.0);
                tn.interval_mass(bin[0].0, bin[0].1) * overlap / (hi - lo)
            }
        })
    }

    /// Draws an action for state `s` into `out`.
    pub fn sample_into<R: Rng + ?Sized>(
        &self,
        s: &[f64],
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        self.check_action(out)?;
        self.check_state(s)?;
        match &self.family {
            BehaviorFamily::IsotropicGaussian { sd, .. } => {
                for k in 0..out.len() {
                    let z: f64 = StandardNormal.sample(rng);
                    out[k] = self.gaussian_mean(s, k) + sd * z;
                }
            }
            BehaviorFamily::UniformBox { lo, hi } => {
                for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
                    *o = rng.random_range(*l..*h);
                }
            }
            BehaviorFamily::DoseProduct { .. } => {
                let (tn, lo, hi) = self.dose_law(s)?;
                out[0] = tn.sample(rng);
                out[1] = rng.random_range(lo..hi);
            }
        }
        Ok(())
    }
}

fn std_normal_mass(alpha: f64, beta: f64) -> f64 {
    if alpha > 0.0 {
        normal_sf(alpha) - normal_sf(beta)
    } else {
        normal_cdf(beta) - normal_cdf(alpha)
    }
}

/// `N` logged records `(s_i, a_i, r_i)` with the clipped behavior density
/// `pi_b(a_i | s_i)` cached per record.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    behavior_density: Vec<f64>,
}

impl LoggedDataset {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        states: Vec<f64>,
        actions: Vec<f64>,
        rewards: Vec<f64>,
        behavior_density: Vec<f64>,
    ) -> Result<Self> {
        let n = rewards.len();
        if n == 0 {
            return Err(Error::InvalidInput(
                "dataset needs at least one record".into(),
            ));
        }
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::InvalidInput(
                "state and action dims must be positive".into(),
            ));
        }
        if states.len() != n * state_dim {
            return Err(Error::DimensionMismatch {
                expected: n * state_dim,
                got: states.len(),
            });
        }
        if actions.len() != n * action_dim {
            return Err(Error::DimensionMismatch {
                expected: n * action_dim,
                got: actions.len(),
            });
        }
        if behavior_density.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: behavior_density.len(),
            });
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&states) || !finite(&actions) || !finite(&rewards) || !finite(&behavior_density)
        {
            return Err(Error::InvalidInput(
                "dataset contains non-finite values".into(),
            ));
        }
        if let Some(i) = behavior_density.iter().position(|p| !(*p > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "behavior density at record {i} is not positive"
            )));
        }
        Ok(Self {
            state_dim,
            action_dim,
            states,
            actions,
            rewards,
            behavior_density,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    #[inline]
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    #[inline]
    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn behavior_density(&self) -> &[f64] {
        &self.behavior_density
    }

    /// Records reordered so that row `k` of the result is row `order[k]` here.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: order.len(),
            });
        }
        self.select(order)
    }

    /// Records at the given indices, in that order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut states = Vec::with_capacity(rows.len() * self.state_dim);
        let mut actions = Vec::with_capacity(rows.len() * self.action_dim);
        let mut rewards = Vec::with_capacity(rows.len());
        let mut pb = Vec::with_capacity(rows.len());
        for &i in rows {
            if i >= self.len() {
                return Err(Error::InvalidInput(format!("row {i} out of range")));
            }
            states.extend_from_slice(self.state(i));
            actions.extend_from_slice(self.action(i));
            rewards.push(self.rewards[i]);
            pb.push(self.behavior_density[i]);
        }
        Self::new(
            self.state_dim,
            self.action_dim,
            states,
            actions,
            rewards,
            pb,
        )
    }

    /// Same records with every reward multiplied by `c`.
    pub fn with_scaled_rewards(&self, c: f64) -> Self {
        let mut out = self.clone();
        for r in &mut out.rewards {
            *r *= c;
        }
        out
    }
}

/// State distribution and reward law of a simulated environment.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]);
    fn sample_reward<R: Rng + ?Sized>(&self, s: &[f64], a: &[f64], rng: &mut R) -> f64;
}

/// Draws `n` records from `env` under `behavior`. Records are generated one
/// at a time from a single seeded stream, so the first `m` records of a run
/// with `n > m` equal the records of a run with `n = m`.
pub fn generate_dataset<E: Environment>(
    env: &E,
    behavior: &BehaviorPolicy,
    n: usize,
    seed: u64,
) -> Result<LoggedDataset> {
    if n == 0 {
        return Err(Error::InvalidInput("n must be at least 1".into()));
    }
    let (ds, da) = (env.state_dim(), env.action_dim());
    if behavior.action_dim() != da {
        return Err(Error::DimensionMismatch {
            expected: da,
            got: behavior.action_dim(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = vec![0.0; n * ds];
    let mut actions = vec![0.0; n * da];
    let mut rewards = Vec::with_capacity(n);
    let mut pb = Vec::with_capacity(n);
    for i in 0..n {
        let s = &mut states[i * ds..(i + 1) * ds];
        env.sample_state(&mut rng, s);
        let a = &mut actions[i * da..(i + 1) * da];
        behavior.sample_into(s, &mut rng, a)?;
        rewards.push(env.sample_reward(s, a, &mut rng));
        pb.push(behavior.density(s, a)?);
    }
    LoggedDataset::new(ds, da, states, actions, rewards, pb)
}

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::policies::{BehaviorFamily, BehaviorPolicy, LoggedDataset, TargetPolicy};
use crate::{Error, Result};

/// Patient features per record.
pub const WARFARIN_FEATURES: usize = 81;

const CLIP_FLOOR: f64 = 0.1;

/// Patient table: features, therapeutic dose and BMI z-score per patient.
#[derive(Debug, Clone, PartialEq)]
pub struct WarfarinTable {
    /// Row-major `n x n_features`.
    pub features: Vec<f64>,
    pub n_features: usize,
    pub dose: Vec<f64>,
    pub bmi_z: Vec<f64>,
}

impl WarfarinTable {
    pub fn len(&self) -> usize {
        self.dose.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dose.is_empty()
    }
}

/// Validated table with the dose statistics that parameterize the logging
/// policy.
#[derive(Debug, Clone, PartialEq)]
pub struct WarfarinData {
    pub table: WarfarinTable,
    pub dose_min: f64,
    pub dose_max: f64,
    pub dose_mean: f64,
    pub dose_sd: f64,
}

impl WarfarinData {
    /// Computes bounds, mean and sample standard deviation of the doses.
    pub fn from_table(table: WarfarinTable) -> Result<Self> {
        let n = table.len();
        if n < 2 {
            return Err(Error::InvalidInput(
                "warfarin table needs at least two patients".into(),
            ));
        }
        if table.bmi_z.len() != n || table.features.len() != n * table.n_features {
            return Err(Error::InvalidInput(
                "warfarin columns have inconsistent lengths".into(),
            ));
        }
        let all_finite = table
            .features
            .iter()
            .chain(&table.dose)
            .chain(&table.bmi_z)
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidInput(
                "warfarin table contains non-finite values".into(),
            ));
        }
        let dose_min = table.dose.iter().copied().fold(f64::INFINITY, f64::min);
        let dose_max = table.dose.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(dose_min < dose_max) {
            return Err(Error::InvalidInput("dose column is constant".into()));
        }
        let dose_mean = table.dose.iter().sum::<f64>() / n as f64;
        let var = table
            .dose
            .iter()
            .map(|d| (d - dose_mean) * (d - dose_mean))
            .sum::<f64>()
            / (n as f64 - 1.0);
        Ok(Self {
            table,
            dose_min,
            dose_max,
            dose_mean,
            dose_sd: libm::sqrt(var),
        })
    }

    /// Logged state width: the patient features followed by the BMI z-score.
    pub fn state_dim(&self) -> usize {
        self.table.n_features + 1
    }

    fn state_of(&self, i: usize, out: &mut Vec<f64>) {
        let f = self.table.n_features;
        out.extend_from_slice(&self.table.features[i * f..(i + 1) * f]);
        out.push(self.table.bmi_z[i]);
    }

    /// Truncated normal first dose around `mu + sd sqrt(0.5) z_BMI`, uniform
    /// second dimension, both on the observed dose range.
    pub fn behavior(&self) -> BehaviorPolicy {
        let spread = self.dose_sd * libm::sqrt(0.5);
        BehaviorPolicy::new(
            BehaviorFamily::DoseProduct {
                base_mean: self.dose_mean,
                slope: spread,
                state_index: self.table.n_features,
                sd: spread,
                lo: self.dose_min,
                hi: self.dose_max,
            },
            CLIP_FLOOR,
        )
        .expect("dose statistics were validated")
    }

    /// `pi(s) = (z_BMI, 0)`.
    pub fn target(&self) -> TargetPolicy {
        TargetPolicy::Coordinate {
            index: self.table.n_features,
            action_dim: 2,
        }
    }

    /// Policy value over the whole table; rewards are deterministic given
    /// the therapeutic dose.
    pub fn true_value(&self) -> f64 {
        let n = self.table.len();
        (0..n)
            .map(|i| warfarin_reward(self.table.bmi_z[i], self.table.dose[i]))
            .sum::<f64>()
            / n as f64
    }
}

/// Negative dosing cost `-max(|a_1 - a*| - 0.1 a*, 0)`.
pub fn warfarin_reward(a1: f64, dose: f64) -> f64 {
    -((a1 - dose).abs() - 0.1 * dose).max(0.0)
}

/// Logged dataset over `n` patients drawn without replacement (all of them
/// when `n` is `None`), actions sampled from the dosing behavior policy.
pub fn warfarin_make_logged(
    data: &WarfarinData,
    n: Option<usize>,
    seed: u64,
) -> Result<LoggedDataset> {
    let total = data.table.len();
    let n = n.unwrap_or(total);
    if n == 0 || n > total {
        return Err(Error::InvalidInput(alloc::format!(
            "requested {n} patients from a table of {total}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<usize> = (0..total).collect();
    if n < total {
        rows.shuffle(&mut rng);
        rows.truncate(n);
    }
    let behavior = data.behavior();
    let ds = data.state_dim();
    let mut states = Vec::with_capacity(n * ds);
    let mut actions = Vec::with_capacity(n * 2);
    let mut rewards = Vec::with_capacity(n);
    let mut pb = Vec::with_capacity(n);
    let mut a = [0.0; 2];
    for &i in &rows {
        let start = states.len();
        data.state_of(i, &mut states);
        let s = &states[start..];
        behavior.sample_into(s, &mut rng, &mut a)?;
        rewards.push(warfarin_reward(a[0], data.table.dose[i]));
        pb.push(behavior.density(s, &a)?);
        actions.extend_from_slice(&a);
    }
    LoggedDataset::new(ds, 2, states, actions, rewards, pb)
}

/// Synthetic stand-in for the preprocessed patient table: standardized
/// features, standard normal BMI z-scores, and log-normal doses that depend
/// on a few features, clipped to `[7, 105]`.
pub fn warfarin_synthetic(n_patients: usize, seed: u64) -> WarfarinTable {
    let n = n_patients.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n * WARFARIN_FEATURES);
    let mut dose = Vec::with_capacity(n);
    let mut bmi_z = Vec::with_capacity(n);
    for _ in 0..n {
        let start = features.len();
        for _ in 0..WARFARIN_FEATURES {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(z);
        }
        let f = &features[start..];
        let z: f64 = StandardNormal.sample(&mut rng);
        let noise: f64 = StandardNormal.sample(&mut rng);
        let log_dose = libm::log(30.0) + 0.12 * z + 0.2 * f[0] - 0.1 * f[1] + 0.25 * noise;
        dose.push(libm::exp(log_dose).clamp(7.0, 105.0));
        bmi_z.push(z);
        // burn one draw so the stream layout does not depend on the dose
        let _: u32 = rng.random();
    }
    WarfarinTable {
        features,
        n_features: WARFARIN_FEATURES,
        dose,
        bmi_z,
    }
}

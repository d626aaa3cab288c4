//! Experiment configuration and the problem definitions it resolves to.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use kmis_core::bandwidth::BandwidthGrid;
use kmis_core::domains::{
    make_abs_error, make_multimodal, make_quadratic_with_noise, warfarin_make_logged,
    warfarin_synthetic, SyntheticDomain, WarfarinData,
};
use kmis_core::policies::{generate_dataset, BehaviorPolicy, LoggedDataset, TargetPolicy};
use kmis_core::reward_model::RewardConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::load_warfarin;

pub const DEFAULT_GRID: &str = "2^-1..2^-7";
pub const DEFAULT_NOISE_SD: f64 = 0.5;

/// Which environment to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Quadratic {
        #[serde(default = "default_noise")]
        noise_sd: f64,
    },
    AbsError {
        #[serde(default)]
        dummy_dims: usize,
    },
    Multimodal,
    /// Patient table from `csv` (relative to the config file), or a
    /// synthetic table when absent.
    Warfarin {
        #[serde(default)]
        csv: Option<PathBuf>,
        #[serde(default = "default_patients")]
        synthetic_patients: usize,
        #[serde(default)]
        table_seed: u64,
    },
}

fn default_noise() -> f64 {
    DEFAULT_NOISE_SD
}

fn default_patients() -> usize {
    2000
}

impl DomainSpec {
    pub fn resolve(&self, base_dir: &Path) -> Result<Problem> {
        Ok(match self {
            Self::Quadratic { noise_sd } => {
                if !(*noise_sd >= 0.0) {
                    return Err(Error::Config(format!(
                        "noise_sd must be >= 0, got {noise_sd}"
                    )));
                }
                Problem::Synthetic(make_quadratic_with_noise(*noise_sd))
            }
            Self::AbsError { dummy_dims } => Problem::Synthetic(make_abs_error(*dummy_dims)),
            Self::Multimodal => Problem::Synthetic(make_multimodal()),
            Self::Warfarin {
                csv,
                synthetic_patients,
                table_seed,
            } => {
                let table = match csv {
                    Some(p) => load_warfarin(&base_dir.join(p))?,
                    None => warfarin_synthetic(*synthetic_patients, *table_seed),
                };
                Problem::Warfarin(Arc::new(WarfarinData::from_table(table)?))
            }
        })
    }
}

/// A resolved environment: data generator, policies and true value.
#[derive(Debug, Clone)]
pub enum Problem {
    Synthetic(SyntheticDomain),
    Warfarin(Arc<WarfarinData>),
}

impl Problem {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Synthetic(d) => d.name(),
            Self::Warfarin(_) => "warfarin",
        }
    }

    pub fn target(&self) -> TargetPolicy {
        match self {
            Self::Synthetic(d) => d.target(),
            Self::Warfarin(w) => w.target(),
        }
    }

    pub fn behavior(&self) -> BehaviorPolicy {
        match self {
            Self::Synthetic(d) => d.behavior(),
            Self::Warfarin(w) => w.behavior(),
        }
    }

    pub fn true_value(&self) -> f64 {
        match self {
            Self::Synthetic(d) => d.true_value(),
            Self::Warfarin(w) => w.true_value(),
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        match self {
            Self::Synthetic(_) => RewardConfig::synthetic(),
            Self::Warfarin(_) => RewardConfig::warfarin(),
        }
    }

    /// Logged data of size `n`; for Warfarin `None` means every patient.
    pub fn generate(&self, n: Option<usize>, seed: u64) -> Result<LoggedDataset> {
        Ok(match self {
            Self::Synthetic(d) => {
                let n =
                    n.ok_or_else(|| Error::Config("synthetic domains need a sample size".into()))?;
                generate_dataset(d, &d.behavior(), n, seed)?
            }
            Self::Warfarin(w) => warfarin_make_logged(w, n, seed)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Direct method: mean model prediction at the target actions.
    Dm,
    /// Isotropic kernel IS.
    Kis,
    /// Kernel IS with learned local metrics.
    Kmis,
    /// Discretized-action IS.
    Disc,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dm => "dm",
            Self::Kis => "kis",
            Self::Kmis => "kmis",
            Self::Disc => "disc",
        }
    }

    pub fn uses_bandwidth(self) -> bool {
        matches!(self, Self::Kis | Self::Kmis)
    }
}

/// How kernel estimators pick `h`. In JSON: `"kallus"`, `"slope"` or
/// `{"fixed": 0.1}`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    /// Closed-form optimum with constants plugged in from the reward model.
    #[default]
    Kallus,
    /// Lepski-style scan over the config grid.
    Slope,
    Fixed(f64),
}

impl BandwidthMode {
    fn suffix(&self) -> String {
        match self {
            Self::Kallus => "kallus".into(),
            Self::Slope => "slope".into(),
            Self::Fixed(h) => format!("h{h}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    #[serde(default)]
    pub bandwidth: BandwidthMode,
    /// Bins per action dimension for `disc`.
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Column value in the outputs; derived from kind and mode when absent.
    #[serde(default)]
    pub label: Option<String>,
}

fn default_bins() -> usize {
    10
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, bandwidth: BandwidthMode) -> Self {
        Self {
            kind,
            bandwidth,
            bins: default_bins(),
            label: None,
        }
    }

    /// Output label. Under a bandwidth sweep the mode is irrelevant and
    /// dropped.
    pub fn label(&self, bandwidth_sweep: bool) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        if self.kind.uses_bandwidth() && !bandwidth_sweep {
            format!("{}-{}", self.kind.as_str(), self.bandwidth.suffix())
        } else {
            self.kind.as_str().into()
        }
    }
}

/// The axis varied across the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case", deny_unknown_fields)]
pub enum Sweep {
    SampleSize {
        values: Vec<usize>,
    },
    /// Fixed bandwidths for the kernel estimators; one dataset and fit per
    /// trial serve every value.
    Bandwidth {
        values: Vec<f64>,
    },
    /// Extra uniform dimensions for the abs-error domain.
    DummyDims {
        values: Vec<usize>,
    },
    /// Reward noise for the quadratic domain.
    NoiseSd {
        values: Vec<f64>,
    },
}

impl Sweep {
    pub fn len(&self) -> usize {
        match self {
            Self::SampleSize { values } | Self::DummyDims { values } => values.len(),
            Self::Bandwidth { values } | Self::NoiseSd { values } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, i: usize) -> f64 {
        match self {
            Self::SampleSize { values } | Self::DummyDims { values } => values[i] as f64,
            Self::Bandwidth { values } | Self::NoiseSd { values } => values[i],
        }
    }

    pub fn axis(&self) -> &'static str {
        match self {
            Self::SampleSize { .. } => "sample_size",
            Self::Bandwidth { .. } => "bandwidth",
            Self::DummyDims { .. } => "dummy_dims",
            Self::NoiseSd { .. } => "noise_sd",
        }
    }
}

/// Optional overrides of the domain's default reward-model settings.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardOverrides {
    pub learning_rate: Option<f64>,
    pub dropout: Option<f64>,
    pub l2: Option<f64>,
    pub patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub hidden: Option<usize>,
}

impl RewardOverrides {
    pub fn apply(&self, mut c: RewardConfig) -> RewardConfig {
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.dropout {
            c.dropout = v;
        }
        if let Some(v) = self.l2 {
            c.l2 = v;
        }
        if let Some(v) = self.patience {
            c.patience = v;
        }
        if let Some(v) = self.max_epochs {
            c.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.hidden {
            c.hidden = v;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    pub estimators: Vec<EstimatorSpec>,
    pub sweep: Sweep,
    /// Records per dataset unless the sweep sets it. Warfarin uses every
    /// patient when absent.
    #[serde(default)]
    pub sample_size: Option<usize>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_true")]
    pub self_normalize: bool,
    /// Grid for `slope` and for the fallback when the bias constant vanishes.
    #[serde(default = "default_grid")]
    pub grid: String,
    #[serde(default)]
    pub reward: RewardOverrides,
    /// Samples per trial-0 dataset written to `metrics.csv`.
    #[serde(default = "default_metrics_rows")]
    pub metrics_rows: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_trials() -> usize {
    20
}

fn default_true() -> bool {
    true
}

fn default_grid() -> String {
    DEFAULT_GRID.into()
}

fn default_metrics_rows() -> usize {
    200
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1".into());
        }
        if self.estimators.is_empty() {
            return bad("estimator list is empty".into());
        }
        if self.sweep.is_empty() {
            return bad(format!("{} sweep has no values", self.sweep.axis()));
        }
        self.grid()?;
        for e in &self.estimators {
            if let BandwidthMode::Fixed(h) = e.bandwidth {
                if !(h > 0.0) {
                    return bad(format!("fixed bandwidth must be positive, got {h}"));
                }
            }
            if e.kind == EstimatorKind::Disc && e.bins == 0 {
                return bad("disc needs at least one bin".into());
            }
        }
        let mut labels: Vec<String> = self
            .estimators
            .iter()
            .map(|e| e.label(matches!(self.sweep, Sweep::Bandwidth { .. })))
            .collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("estimator labels must be unique".into());
        }
        let synthetic = !matches!(self.domain, DomainSpec::Warfarin { .. });
        match &self.sweep {
            Sweep::SampleSize { values } => {
                if values.contains(&0) {
                    return bad("sample sizes must be positive".into());
                }
            }
            Sweep::Bandwidth { values } => {
                if values.iter().any(|h| !(*h > 0.0)) {
                    return bad("swept bandwidths must be positive".into());
                }
            }
            Sweep::DummyDims { .. } => {
                if !matches!(self.domain, DomainSpec::AbsError { .. }) {
                    return bad("dummy_dims sweep needs the abs_error domain".into());
                }
            }
            Sweep::NoiseSd { values } => {
                if !matches!(self.domain, DomainSpec::Quadratic { .. }) {
                    return bad("noise_sd sweep needs the quadratic domain".into());
                }
                if values.iter().any(|s| !(*s >= 0.0)) {
                    return bad("noise sds must be >= 0".into());
                }
            }
        }
        if synthetic
            && self.sample_size.is_none()
            && !matches!(self.sweep, Sweep::SampleSize { .. })
        {
            return bad("sample_size is required for synthetic domains".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<BandwidthGrid> {
        Ok(self.grid.parse::<BandwidthGrid>()?)
    }

    /// Problem and sample size for sweep position `i`.
    pub fn sweep_point(&self, i: usize, base: &Problem) -> (Problem, Option<usize>) {
        match &self.sweep {
            Sweep::SampleSize { values } => (base.clone(), Some(values[i])),
            Sweep::Bandwidth { .. } => (base.clone(), self.sample_size),
            Sweep::DummyDims { values } => (
                Problem::Synthetic(make_abs_error(values[i])),
                self.sample_size,
            ),
            Sweep::NoiseSd { values } => (
                Problem::Synthetic(make_quadratic_with_noise(values[i])),
                self.sample_size,
            ),
        }
    }
}

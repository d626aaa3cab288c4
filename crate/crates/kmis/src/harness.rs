//! Seeded multi-trial experiments: per-trial data, one shared reward-model
//! fit, every configured estimator, then aggregation and file output.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use kmis_core::bandwidth::{
    cb_from_hessians, estimate_cv, optimal_bandwidth, slope_select, BandwidthGrid, LomseConstants,
    SlopeSelection,
};
use kmis_core::estimators::{
    discretized_is, kernel_is, target_hessians, transforms_from_hessians, EstimatorReport,
};
use kmis_core::metric::regularized_metric;
use kmis_core::numerics::{pairwise_sum, SquareMatrix, SymMatrix};
use kmis_core::policies::LoggedDataset;
use kmis_core::reward_model::{dm_estimate, fit, FitReport, RewardConfig, RewardModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    BandwidthMode, EstimatorKind, EstimatorSpec, ExperimentConfig, Problem, Sweep,
};
use crate::error::{csv_err, io_err, Error, Result};
use crate::io::{fmt_f64, write_json};

/// Environment variable holding the worker-thread count for `run`.
pub const THREADS_ENV: &str = "KMIS_THREADS";

/// Worker threads from [`THREADS_ENV`]; `None` leaves the choice to rayon.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(None),
    }
}

/// Seed for the reward-model fit of a trial, decorrelated from the data
/// seed so the two ChaCha streams differ.
pub fn fit_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// What a trial has to compute beyond the dataset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Needs {
    pub model: bool,
    pub hessians: bool,
}

impl Needs {
    pub fn for_estimators<'a>(
        specs: impl IntoIterator<Item = &'a EstimatorSpec>,
        bandwidth_sweep: bool,
    ) -> Self {
        let mut n = Self::default();
        for s in specs {
            let kallus =
                s.kind.uses_bandwidth() && !bandwidth_sweep && s.bandwidth == BandwidthMode::Kallus;
            n.model |= matches!(s.kind, EstimatorKind::Dm | EstimatorKind::Kmis) || kallus;
            n.hessians |= s.kind == EstimatorKind::Kmis || kallus;
        }
        n
    }

    pub fn all() -> Self {
        Self {
            model: true,
            hessians: true,
        }
    }
}

/// Everything one trial's estimators share.
#[derive(Debug, Clone)]
pub struct TrialContext {
    pub problem: Problem,
    pub data: LoggedDataset,
    pub model: Option<RewardModel>,
    pub fit_report: Option<FitReport>,
    /// Action Hessians of the model at `(s_i, pi(s_i))`.
    pub hessians: Option<Vec<SymMatrix>>,
    /// Kernel-input transforms built from `hessians`.
    pub transforms: Option<Vec<SquareMatrix>>,
}

/// A bandwidth request resolved for one estimator call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthChoice {
    Fixed(f64),
    Kallus,
    Slope,
}

impl From<BandwidthMode> for BandwidthChoice {
    fn from(m: BandwidthMode) -> Self {
        match m {
            BandwidthMode::Kallus => Self::Kallus,
            BandwidthMode::Slope => Self::Slope,
            BandwidthMode::Fixed(h) => Self::Fixed(h),
        }
    }
}

/// Estimator output plus how its bandwidth was chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub estimator: String,
    #[serde(flatten)]
    pub report: EstimatorReport,
    /// Plug-in constants behind a `kallus` bandwidth.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lomse: Option<LomseConstants>,
    /// True when the bias constant vanished and the grid median was used.
    #[serde(default)]
    pub bandwidth_fallback: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<SlopeSelection>,
}

impl TrialContext {
    /// Generates the trial's data and fits what `needs` asks for.
    pub fn prepare(
        problem: &Problem,
        n: Option<usize>,
        seed: u64,
        reward: &RewardConfig,
        needs: Needs,
    ) -> Result<Self> {
        let data = problem.generate(n, seed)?;
        let (model, fit_report) = if needs.model || needs.hessians {
            let (m, r) = fit(&data, reward, fit_seed(seed))?;
            (Some(m), Some(r))
        } else {
            (None, None)
        };
        Self::from_parts(problem.clone(), data, model, fit_report, needs.hessians)
    }

    /// Context around existing data and an optional fitted model.
    pub fn from_parts(
        problem: Problem,
        data: LoggedDataset,
        model: Option<RewardModel>,
        fit_report: Option<FitReport>,
        hessians: bool,
    ) -> Result<Self> {
        let (hessians, transforms) = match (&model, hessians) {
            (Some(m), true) => {
                let hs = target_hessians(m, &data, &problem.target())?;
                let ls = transforms_from_hessians(&hs)?;
                (Some(hs), Some(ls))
            }
            _ => (None, None),
        };
        Ok(Self {
            problem,
            data,
            model,
            fit_report,
            hessians,
            transforms,
        })
    }

    fn model(&self) -> Result<&RewardModel> {
        self.model
            .as_ref()
            .ok_or(Error::Core(kmis_core::Error::NotFitted))
    }

    /// Plug-in constants for the closed-form bandwidth.
    pub fn lomse_constants(&self) -> Result<LomseConstants> {
        let model = self.model()?;
        let hs = self
            .hessians
            .as_ref()
            .ok_or(Error::Core(kmis_core::Error::NotFitted))?;
        let target = self.problem.target();
        Ok(LomseConstants {
            c_b: cb_from_hessians(hs),
            c_v: estimate_cv(model, &self.data, &target, &self.problem.behavior())?,
            n: self.data.len(),
            d_a: self.data.action_dim(),
        })
    }

    /// Closed-form bandwidth; the grid median when the bias constant is 0.
    pub fn kallus_bandwidth(&self, grid: &BandwidthGrid) -> Result<(f64, LomseConstants, bool)> {
        let k = self.lomse_constants()?;
        match optimal_bandwidth(&k) {
            Ok(h) => Ok((h, k, false)),
            Err(kmis_core::Error::DegenerateBias) => Ok((grid.median(), k, true)),
            Err(e) => Err(e.into()),
        }
    }

    fn kernel(&self, kind: EstimatorKind, h: f64, sn: bool) -> Result<EstimatorReport> {
        let transforms = match kind {
            EstimatorKind::Kmis => Some(
                self.transforms
                    .as_deref()
                    .ok_or(Error::Core(kmis_core::Error::NotFitted))?,
            ),
            _ => None,
        };
        Ok(kernel_is(
            &self.data,
            &self.problem.target(),
            h,
            sn,
            transforms,
        )?)
    }

    /// Runs one estimator on this trial.
    pub fn evaluate(
        &self,
        spec: &EstimatorSpec,
        bandwidth: BandwidthChoice,
        self_normalize: bool,
        grid: &BandwidthGrid,
        label: String,
    ) -> Result<Evaluation> {
        let mut out = Evaluation {
            estimator: label,
            report: EstimatorReport {
                estimate: f64::NAN,
                n_used: 0,
                bandwidth: None,
                self_normalized: self_normalize,
                weight_sum: 0.0,
                max_weight_share: 0.0,
                metric_applied: false,
                std_error: 0.0,
            },
            lomse: None,
            bandwidth_fallback: false,
            slope: None,
        };
        let target = self.problem.target();
        match spec.kind {
            EstimatorKind::Dm => {
                let v = dm_estimate(self.model()?, self.data.states(), &target)?;
                out.report.estimate = v;
                out.report.n_used = self.data.len();
                out.report.self_normalized = false;
            }
            EstimatorKind::Disc => {
                out.report = discretized_is(
                    &self.data,
                    &target,
                    &self.problem.behavior(),
                    spec.bins,
                    self_normalize,
                )?;
            }
            kind => {
                let h = match bandwidth {
                    BandwidthChoice::Fixed(h) => h,
                    BandwidthChoice::Kallus => {
                        let (h, k, fallback) = self.kallus_bandwidth(grid)?;
                        out.lomse = Some(k);
                        out.bandwidth_fallback = fallback;
                        h
                    }
                    BandwidthChoice::Slope => {
                        let sel = slope_select(grid, |h| {
                            self.kernel(kind, h, self_normalize)
                                .map(|r| (r.estimate, r.std_error))
                                .map_err(|e| match e {
                                    Error::Core(c) => c,
                                    other => kmis_core::Error::InvalidInput(other.to_string()),
                                })
                        })?;
                        let h = sel.bandwidth;
                        out.slope = Some(sel);
                        h
                    }
                };
                out.report = self.kernel(kind, h, self_normalize)?;
            }
        }
        Ok(out)
    }
}

/// One estimator on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub sweep_value: f64,
    pub trial: usize,
    pub seed: u64,
    pub estimator: String,
    pub bandwidth: Option<f64>,
    pub estimate: Option<f64>,
    pub true_value: f64,
    pub squared_error: Option<f64>,
    /// Error tag; set exactly when `estimate` is empty.
    pub error: Option<String>,
}

/// Plot-ready metric export row for one logged sample. Vectors are
/// space-separated; eigenvectors are listed column by column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub sweep_value: Option<f64>,
    pub trial: usize,
    pub sample: usize,
    pub state: String,
    pub target_action: String,
    pub eigenvalues: String,
    pub eigenvectors: String,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<TrialRecord>,
    pub metrics: Vec<MetricRow>,
}

impl ExperimentOutput {
    pub fn error_count(&self) -> usize {
        self.records.iter().filter(|r| r.error.is_some()).count()
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(" ")
}

fn metric_rows(
    ctx: &TrialContext,
    sweep_value: Option<f64>,
    trial: usize,
    limit: usize,
) -> Vec<MetricRow> {
    let Some(hs) = &ctx.hessians else {
        return Vec::new();
    };
    let target = ctx.problem.target();
    hs.iter()
        .take(limit)
        .enumerate()
        .filter_map(|(i, h)| {
            let m = regularized_metric(h).ok()?;
            let t = target.act(ctx.data.state(i)).ok()?;
            let d = m.dim();
            let vecs: Vec<f64> = (0..d).flat_map(|k| m.basis().column(k)).collect();
            Some(MetricRow {
                sweep_value,
                trial,
                sample: i,
                state: join(ctx.data.state(i)),
                target_action: join(&t),
                eigenvalues: join(&m.eigenvalues()),
                eigenvectors: join(&vecs),
                degenerate: m.is_degenerate(),
            })
        })
        .collect()
}

/// Records keyed by (sweep index, trial, estimator index) for reordering.
type KeyedRecords = Vec<(usize, usize, usize, TrialRecord)>;

struct Unit {
    /// Sweep positions served by this unit's dataset.
    sweep_idx: Vec<usize>,
    trial: usize,
}

/// Runs every (sweep value, trial) of `config` on a pool of `threads`
/// workers. Output order and content do not depend on the thread count.
/// `base_dir` resolves relative paths inside the config.
pub fn run_experiment(
    config: &ExperimentConfig,
    base_dir: &Path,
    threads: Option<usize>,
) -> Result<ExperimentOutput> {
    config.validate()?;
    let grid = config.grid()?;
    let base = config.domain.resolve(base_dir)?;
    let bandwidth_sweep = matches!(config.sweep, Sweep::Bandwidth { .. });
    let needs = Needs::for_estimators(&config.estimators, bandwidth_sweep);
    let labels: Vec<String> = config
        .estimators
        .iter()
        .map(|e| e.label(bandwidth_sweep))
        .collect();

    let mut units = Vec::new();
    for trial in 0..config.n_trials {
        if bandwidth_sweep {
            units.push(Unit {
                sweep_idx: (0..config.sweep.len()).collect(),
                trial,
            });
        } else {
            for i in 0..config.sweep.len() {
                units.push(Unit {
                    sweep_idx: vec![i],
                    trial,
                });
            }
        }
    }

    let run_unit = |u: &Unit| -> (KeyedRecords, Vec<MetricRow>) {
        let seed = config.base_seed.wrapping_add(u.trial as u64);
        let (problem, n) = config.sweep_point(u.sweep_idx[0], &base);
        let reward = config.reward.apply(problem.reward_config());
        let truth = problem.true_value();
        let ctx = TrialContext::prepare(&problem, n, seed, &reward, needs);
        let mut rows = Vec::new();
        for &si in &u.sweep_idx {
            let sweep_value = config.sweep.value(si);
            for (ei, spec) in config.estimators.iter().enumerate() {
                let choice = if bandwidth_sweep {
                    BandwidthChoice::Fixed(sweep_value)
                } else {
                    spec.bandwidth.into()
                };
                let result = ctx.as_ref().map_err(|e| e.to_string()).and_then(|c| {
                    c.evaluate(
                        spec,
                        choice,
                        config.self_normalize,
                        &grid,
                        labels[ei].clone(),
                    )
                    .map_err(|e| e.to_string())
                });
                let mut rec = TrialRecord {
                    sweep_value,
                    trial: u.trial,
                    seed,
                    estimator: labels[ei].clone(),
                    bandwidth: None,
                    estimate: None,
                    true_value: truth,
                    squared_error: None,
                    error: None,
                };
                match result {
                    Ok(ev) if ev.report.estimate.is_finite() => {
                        let est = ev.report.estimate;
                        rec.bandwidth = ev.report.bandwidth;
                        rec.estimate = Some(est);
                        rec.squared_error = Some((est - truth) * (est - truth));
                    }
                    Ok(ev) => {
                        rec.error = Some(format!("non-finite estimate {}", ev.report.estimate))
                    }
                    Err(e) => rec.error = Some(e),
                }
                rows.push((si, u.trial, ei, rec));
            }
        }
        let metrics = match (&ctx, u.trial) {
            (Ok(c), 0) => {
                let sv = (!bandwidth_sweep).then(|| config.sweep.value(u.sweep_idx[0]));
                metric_rows(c, sv, 0, config.metrics_rows)
            }
            _ => Vec::new(),
        };
        (rows, metrics)
    };

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| units.par_iter().map(run_unit).collect());

    let mut keyed = Vec::new();
    let mut metrics = Vec::new();
    for (rows, m) in results {
        keyed.extend(rows);
        metrics.extend(m);
    }
    keyed.sort_by_key(|(si, t, ei, _)| (*si, *t, *ei));
    Ok(ExperimentOutput {
        records: keyed.into_iter().map(|(_, _, _, r)| r).collect(),
        metrics,
    })
}

/// Accuracy summary of one (sweep value, estimator) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub sweep_value: f64,
    pub estimator: String,
    pub n_ok: usize,
    pub n_failed: usize,
    pub true_value: f64,
    pub mean_estimate: f64,
    pub mse: f64,
    /// Standard error of the mean squared error.
    pub mse_std_error: f64,
    pub bias_sq: f64,
    /// Population variance of the estimates.
    pub variance: f64,
}

/// Groups records by (sweep value, estimator) in order of first appearance.
/// `mse = bias_sq + variance` up to rounding.
pub fn aggregate(records: &[TrialRecord]) -> Result<Vec<Aggregate>> {
    let mut keys: Vec<(u64, &str)> = Vec::new();
    for r in records {
        let k = (r.sweep_value.to_bits(), r.estimator.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = Vec::with_capacity(keys.len());
    for (sv_bits, est) in keys {
        let group: Vec<&TrialRecord> = records
            .iter()
            .filter(|r| r.sweep_value.to_bits() == sv_bits && r.estimator == est)
            .collect();
        let sweep_value = f64::from_bits(sv_bits);
        let ok: Vec<&TrialRecord> = group
            .iter()
            .copied()
            .filter(|r| r.estimate.is_some())
            .collect();
        if ok.is_empty() {
            return Err(Error::EmptyGroup {
                sweep_value,
                estimator: est.into(),
            });
        }
        let n = ok.len() as f64;
        let truth = ok[0].true_value;
        let ests: Vec<f64> = ok.iter().map(|r| r.estimate.unwrap()).collect();
        let sq: Vec<f64> = ests.iter().map(|e| (e - truth) * (e - truth)).collect();
        let mean = pairwise_sum(&ests) / n;
        let mse = pairwise_sum(&sq) / n;
        let dev: Vec<f64> = ests.iter().map(|e| (e - mean) * (e - mean)).collect();
        let variance = pairwise_sum(&dev) / n;
        let sq_dev: Vec<f64> = sq.iter().map(|s| (s - mse) * (s - mse)).collect();
        let mse_std_error = if ok.len() > 1 {
            (pairwise_sum(&sq_dev) / (n - 1.0)).sqrt() / n.sqrt()
        } else {
            0.0
        };
        out.push(Aggregate {
            sweep_value,
            estimator: est.into(),
            n_ok: ok.len(),
            n_failed: group.len() - ok.len(),
            true_value: truth,
            mean_estimate: mean,
            mse,
            mse_std_error,
            bias_sq: (mean - truth) * (mean - truth),
            variance,
        });
    }
    Ok(out)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(f));
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_trials(path: &Path, records: &[TrialRecord]) -> Result<()> {
    write_csv(path, records)
}

pub fn load_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<TrialRecord>, _>>()
        .map_err(csv_err(path))
}

/// Writes `summary.csv` and `summary.json`.
pub fn write_summary(dir: &Path, aggregates: &[Aggregate]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(&dir.join("summary.csv"), aggregates)?;
    #[derive(Serialize)]
    struct Group<'a> {
        sweep_value: f64,
        estimators: Vec<&'a Aggregate>,
    }
    let mut groups: Vec<Group> = Vec::new();
    for a in aggregates {
        match groups
            .iter_mut()
            .find(|g| g.sweep_value.to_bits() == a.sweep_value.to_bits())
        {
            Some(g) => g.estimators.push(a),
            None => groups.push(Group {
                sweep_value: a.sweep_value,
                estimators: vec![a],
            }),
        }
    }
    write_json(&dir.join("summary.json"), &groups)
}

/// Writes `trials.csv`, `metrics.csv` and, when every group has a
/// successful record, the summaries. Returns the aggregation result.
pub fn emit(dir: &Path, output: &ExperimentOutput) -> Result<Vec<Aggregate>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_trials(&dir.join("trials.csv"), &output.records)?;
    write_csv(&dir.join("metrics.csv"), &output.metrics)?;
    let aggregates = aggregate(&output.records)?;
    write_summary(dir, &aggregates)?;
    Ok(aggregates)
}

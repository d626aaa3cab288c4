use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kmis::config::{
    BandwidthMode, DomainSpec, EstimatorKind, EstimatorSpec, ExperimentConfig, DEFAULT_GRID,
    DEFAULT_NOISE_SD,
};
use kmis::harness::{
    aggregate, emit, load_trials, run_experiment, threads_from_env, write_summary, BandwidthChoice,
    TrialContext,
};
use kmis::io::{load_dataset, load_model, read_json, save_dataset, save_model, save_warfarin};
use kmis::{Error, Result};
use kmis_core::bandwidth::BandwidthGrid;
use kmis_core::domains::warfarin_synthetic;
use kmis_core::reward_model::{fit, RewardConfig};

#[derive(Parser)]
#[command(
    name = "kmis",
    version,
    about = "Kernel metric learning for off-policy evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a logged dataset and write it as CSV.
    Generate {
        #[command(flatten)]
        domain: DomainArgs,
        /// Records to draw; Warfarin defaults to every patient.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the synthetic Warfarin patient table here.
        #[arg(long)]
        table_out: Option<PathBuf>,
    },
    /// Fit the heteroscedastic reward network on a logged dataset.
    FitReward {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Preset::Synthetic)]
        preset: Preset,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        l2: Option<f64>,
    },
    /// Run one estimator on a dataset and print a JSON report.
    Evaluate {
        #[command(flatten)]
        domain: DomainArgs,
        #[arg(long)]
        data: PathBuf,
        /// Reward model; required by dm, kmis and auto-kallus.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        estimator: EstimatorArg,
        /// A positive bandwidth, `auto-kallus` or `auto-slope`.
        #[arg(long, default_value = "auto-kallus")]
        bandwidth: String,
        #[arg(long, default_value = DEFAULT_GRID)]
        grid: String,
        #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
        self_normalize: bool,
        /// Bins per action dimension for disc.
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// Run a full experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides the config's `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize an existing trials.csv.
    Aggregate {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainKind {
    Quadratic,
    AbsError,
    Multimodal,
    Warfarin,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Synthetic,
    Warfarin,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Dm,
    Kis,
    Kmis,
    Disc,
}

#[derive(Args)]
struct DomainArgs {
    #[arg(long, value_enum)]
    domain: DomainKind,
    #[arg(long, default_value_t = DEFAULT_NOISE_SD)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    dummy_dims: usize,
    /// Preprocessed patient table; a synthetic one is used when absent.
    #[arg(long)]
    warfarin_csv: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    synthetic_patients: usize,
    #[arg(long, default_value_t = 0)]
    table_seed: u64,
}

impl DomainArgs {
    fn spec(&self) -> DomainSpec {
        match self.domain {
            DomainKind::Quadratic => DomainSpec::Quadratic {
                noise_sd: self.noise_sd,
            },
            DomainKind::AbsError => DomainSpec::AbsError {
                dummy_dims: self.dummy_dims,
            },
            DomainKind::Multimodal => DomainSpec::Multimodal,
            DomainKind::Warfarin => DomainSpec::Warfarin {
                csv: self.warfarin_csv.clone(),
                synthetic_patients: self.synthetic_patients,
                table_seed: self.table_seed,
            },
        }
    }
}

fn parse_bandwidth(s: &str) -> Result<BandwidthChoice> {
    match s {
        "auto-kallus" => Ok(BandwidthChoice::Kallus),
        "auto-slope" => Ok(BandwidthChoice::Slope),
        h => match h.parse::<f64>() {
            Ok(v) if v > 0.0 && v.is_finite() => Ok(BandwidthChoice::Fixed(v)),
            _ => Err(Error::Config(format!(
                "--bandwidth must be a positive number, auto-kallus or auto-slope, got {h:?}"
            ))),
        },
    }
}

/// Pretty JSON on stdout; a closed pipe is not an error.
fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v)
        .map_err(|e| Error::Config(format!("cannot encode report: {e}")))?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: PathBuf::from("<stdout>"),
            source: e,
        }),
        _ => Ok(()),
    }
}

/// Returns the number of error-tagged rows produced.
fn execute(command: Command) -> Result<usize> {
    match command {
        Command::Generate {
            domain,
            n,
            seed,
            out,
            table_out,
        } => {
            if let (Some(p), None) = (&table_out, &domain.warfarin_csv) {
                save_warfarin(
                    p,
                    &warfarin_synthetic(domain.synthetic_patients, domain.table_seed),
                )?;
            }
            let problem = domain.spec().resolve(Path::new("."))?;
            save_dataset(&out, &problem.generate(n, seed)?)?;
            Ok(0)
        }
        Command::FitReward {
            data,
            out,
            seed,
            preset,
            dropout,
            l2,
        } => {
            let ds = load_dataset(&data)?;
            let mut cfg = match preset {
                Preset::Synthetic => RewardConfig::synthetic(),
                Preset::Warfarin => RewardConfig::warfarin(),
            };
            if let Some(p) = dropout {
                cfg.dropout = p;
            }
            if let Some(c) = l2 {
                cfg.l2 = c;
            }
            let (model, report) = fit(&ds, &cfg, seed)?;
            save_model(&out, &model, Some(&report))?;
            eprintln!(
                "fit: {} epochs, best validation nll {:.6} at epoch {}",
                report.epochs_run, report.best_validation_nll, report.best_epoch
            );
            Ok(0)
        }
        Command::Evaluate {
            domain,
            data,
            model,
            estimator,
            bandwidth,
            grid,
            self_normalize,
            bins,
        } => {
            let problem = domain.spec().resolve(Path::new("."))?;
            let ds = load_dataset(&data)?;
            let (m, report) = match &model {
                Some(p) => {
                    let blob = load_model(p)?;
                    (Some(blob.model), blob.fit)
                }
                None => (None, None),
            };
            let kind = match estimator {
                EstimatorArg::Dm => EstimatorKind::Dm,
                EstimatorArg::Kis => EstimatorKind::Kis,
                EstimatorArg::Kmis => EstimatorKind::Kmis,
                EstimatorArg::Disc => EstimatorKind::Disc,
            };
            let choice = parse_bandwidth(&bandwidth)?;
            let grid: BandwidthGrid = grid.parse()?;
            let has_model = m.is_some();
            let ctx = TrialContext::from_parts(problem, ds, m, report, has_model)?;
            let mut spec = EstimatorSpec::new(kind, BandwidthMode::Kallus);
            spec.bins = bins;
            let ev = ctx.evaluate(&spec, choice, self_normalize, &grid, kind.as_str().into())?;
            print_json(&ev)?;
            Ok(0)
        }
        Command::Run { config, out } => {
            let cfg: ExperimentConfig = read_json(&config)?;
            let base_dir = config.parent().unwrap_or(Path::new("."));
            let dir = out
                .or_else(|| cfg.output.as_ref().map(|o| base_dir.join(o)))
                .ok_or_else(|| {
                    Error::Config("no output directory: set `output` or pass --out".into())
                })?;
            let output = run_experiment(&cfg, base_dir, threads_from_env()?)?;
            let aggregates = emit(&dir, &output)?;
            print_json(&aggregates)?;
            Ok(output.error_count())
        }
        Command::Aggregate { trials, out } => {
            let records = load_trials(&trials)?;
            let aggregates = aggregate(&records)?;
            write_summary(&out, &aggregates)?;
            print_json(&aggregates)?;
            Ok(records.iter().filter(|r| r.error.is_some()).count())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(n) => {
            eprintln!("kmis: {n} row(s) carry error tags");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("kmis: {e}");
            ExitCode::from(2)
        }
    }
}

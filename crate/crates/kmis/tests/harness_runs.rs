use std::path::Path;

use kmis::config::{
    BandwidthMode, DomainSpec, EstimatorKind, EstimatorSpec, ExperimentConfig, Problem,
    RewardOverrides, Sweep,
};
use kmis::harness::{
    aggregate, emit, load_trials, run_experiment, BandwidthChoice, TrialContext, TrialRecord,
};
use kmis::Error;
use kmis_core::bandwidth::BandwidthGrid;
use kmis_core::domains::make_quadratic;
use kmis_core::policies::generate_dataset;
use kmis_core::reward_model::RewardModel;
use proptest::prelude::*;

fn record(sweep_value: f64, estimator: &str, estimate: Option<f64>, truth: f64) -> TrialRecord {
    TrialRecord {
        sweep_value,
        trial: 0,
        seed: 0,
        estimator: estimator.into(),
        bandwidth: None,
        estimate,
        true_value: truth,
        squared_error: estimate.map(|e| (e - truth) * (e - truth)),
        error: estimate.is_none().then(|| "failed".to_string()),
    }
}

fn small_config() -> ExperimentConfig {
    serde_json::from_str(
        r#"{
            "domain": {"kind": "quadratic"},
            "estimators": [
                {"kind": "dm"},
                {"kind": "kis"},
                {"kind": "kmis", "bandwidth": "slope"},
                {"kind": "kis", "bandwidth": {"fixed": 0.25}},
                {"kind": "disc", "bins": 6}
            ],
            "sweep": {"axis": "sample_size", "values": [200, 300]},
            "n_trials": 2,
            "base_seed": 3,
            "grid": "2^-1..2^-4",
            "reward": {"max_epochs": 4},
            "metrics_rows": 5
        }"#,
    )
    .unwrap()
}

#[test]
fn aggregate_small_examples() {
    let a = aggregate(&vec![record(1.0, "x", Some(1.0), 0.0); 3]).unwrap();
    assert_eq!((a[0].mse, a[0].bias_sq, a[0].variance), (1.0, 1.0, 0.0));

    let a = aggregate(&[
        record(1.0, "x", Some(0.0), 0.0),
        record(1.0, "x", Some(2.0), 0.0),
    ])
    .unwrap();
    assert_eq!((a[0].mse, a[0].bias_sq, a[0].variance), (2.0, 1.0, 1.0));
}

#[test]
fn aggregate_counts_failures_and_rejects_empty_groups() {
    let recs = [
        record(1.0, "x", Some(0.5), 0.0),
        record(1.0, "x", None, 0.0),
        record(2.0, "x", Some(0.5), 0.0),
    ];
    let a = aggregate(&recs).unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!((a[0].n_ok, a[0].n_failed), (1, 1));

    let e = aggregate(&[record(4.0, "kmis", None, 0.0)]).unwrap_err();
    match e {
        Error::EmptyGroup {
            sweep_value,
            estimator,
        } => {
            assert_eq!(sweep_value, 4.0);
            assert_eq!(estimator, "kmis");
        }
        other => panic!("unexpected {other}"),
    }
}

proptest! {
    #[test]
    fn mse_splits_into_bias_and_variance(
        ests in prop::collection::vec(-100.0f64..100.0, 1..40),
        truth in -50.0f64..50.0,
    ) {
        let recs: Vec<TrialRecord> = ests.iter().map(|e| record(0.5, "e", Some(*e), truth)).collect();
        let a = &aggregate(&recs).unwrap()[0];
        prop_assert!(a.mse >= 0.0 && a.variance >= 0.0);
        prop_assert!((a.mse - (a.bias_sq + a.variance)).abs() <= 1e-12 * a.mse.max(1.0));
    }
}

#[test]
fn config_defaults_and_labels() {
    let c = small_config();
    c.validate().unwrap();
    assert_eq!(c.estimators[1].bandwidth, BandwidthMode::Kallus);
    assert_eq!(c.estimators[3].bandwidth, BandwidthMode::Fixed(0.25));
    assert!(c.self_normalize);
    let labels: Vec<String> = c.estimators.iter().map(|e| e.label(false)).collect();
    assert_eq!(
        labels,
        ["dm", "kis-kallus", "kmis-slope", "kis-h0.25", "disc"]
    );
    assert_eq!(c.grid().unwrap().len(), 4);

    let round: ExperimentConfig =
        serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
    assert_eq!(round, c);
}

#[test]
fn config_validation_rejects_bad_inputs() {
    let mut c = small_config();
    c.n_trials = 0;
    assert!(c.validate().is_err());

    let mut c = small_config();
    c.sweep = Sweep::SampleSize { values: vec![] };
    assert!(c.validate().is_err());

    let mut c = small_config();
    c.estimators.clear();
    assert!(c.validate().is_err());

    let mut c = small_config();
    c.sweep = Sweep::DummyDims { values: vec![1] };
    assert!(c.validate().is_err());

    let mut c = small_config();
    c.estimators
        .push(EstimatorSpec::new(EstimatorKind::Dm, BandwidthMode::Kallus));
    assert!(c.validate().is_err());

    let mut c = small_config();
    c.grid = "2^-1..2^-1x".into();
    assert!(c.validate().is_err());

    let unknown = r#"{"domain": {"kind": "quadratic"}, "estimators": [{"kind": "kis"}],
        "sweep": {"axis": "sample_size", "values": [10]}, "trials": 3}"#;
    assert!(serde_json::from_str::<ExperimentConfig>(unknown).is_err());
}

#[test]
fn run_is_deterministic_and_complete() {
    let c = small_config();
    let first = run_experiment(&c, Path::new("."), Some(1)).unwrap();
    let second = run_experiment(&c, Path::new("."), Some(3)).unwrap();
    assert_eq!(first, second);
    assert_eq!(
        first.records.len(),
        c.sweep.len() * c.n_trials * c.estimators.len()
    );
    assert_eq!(first.error_count(), 0);
    assert_eq!(first.metrics.len(), c.sweep.len() * c.metrics_rows);

    for r in &first.records {
        assert_eq!(r.seed, c.base_seed + r.trial as u64);
        assert!(r.squared_error.unwrap() >= 0.0);
        if r.estimator.starts_with("ki") {
            assert!(r.bandwidth.unwrap() > 0.0);
        }
    }
    let fixed: Vec<f64> = first
        .records
        .iter()
        .filter(|r| r.estimator == "kis-h0.25")
        .map(|r| r.bandwidth.unwrap())
        .collect();
    assert!(fixed.iter().all(|h| *h == 0.25));

    let dir = tempfile::tempdir().unwrap();
    let summary = emit(dir.path(), &first).unwrap();
    assert_eq!(summary.len(), c.sweep.len() * c.estimators.len());
    assert_eq!(
        load_trials(&dir.path().join("trials.csv")).unwrap(),
        first.records
    );
    let header = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "sweep_value,trial,seed,estimator,bandwidth,estimate,true_value,squared_error,error"
    );
    for f in ["summary.csv", "summary.json", "metrics.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn bandwidth_sweep_shares_one_dataset_per_trial() {
    let c = ExperimentConfig {
        domain: DomainSpec::AbsError { dummy_dims: 0 },
        estimators: vec![
            EstimatorSpec::new(EstimatorKind::Kis, BandwidthMode::Kallus),
            EstimatorSpec::new(EstimatorKind::Disc, BandwidthMode::Kallus),
        ],
        sweep: Sweep::Bandwidth {
            values: vec![0.5, 0.25],
        },
        sample_size: Some(300),
        n_trials: 2,
        base_seed: 9,
        self_normalize: true,
        grid: "2^-1..2^-3".into(),
        reward: RewardOverrides::default(),
        metrics_rows: 0,
        output: None,
    };
    let out = run_experiment(&c, Path::new("."), Some(2)).unwrap();
    assert_eq!(out.records.len(), 8);
    // Disc ignores the bandwidth, so the same data gives the same estimate.
    let disc: Vec<&TrialRecord> = out
        .records
        .iter()
        .filter(|r| r.estimator == "disc")
        .collect();
    assert_eq!(disc[0].estimate, disc[2].estimate);
    assert_eq!(disc[1].estimate, disc[3].estimate);
    let kis: Vec<f64> = out
        .records
        .iter()
        .filter(|r| r.estimator == "kis")
        .map(|r| r.bandwidth.unwrap())
        .collect();
    assert_eq!(kis, [0.5, 0.5, 0.25, 0.25]);
}

#[test]
fn estimator_errors_become_row_tags() {
    // Two bins on one sample per trial leaves dimensions without spread.
    let mut c = small_config();
    c.estimators = vec![EstimatorSpec::new(
        EstimatorKind::Disc,
        BandwidthMode::Kallus,
    )];
    c.sweep = Sweep::SampleSize { values: vec![1] };
    let out = run_experiment(&c, Path::new("."), Some(1)).unwrap();
    assert_eq!(out.records.len(), 2);
    assert_eq!(out.error_count(), 2);
    assert!(out
        .records
        .iter()
        .all(|r| r.estimate.is_none() && r.squared_error.is_none()));
}

#[test]
fn flat_reward_oracle_gives_kis_equal_kmis() {
    let d = make_quadratic();
    let grid: BandwidthGrid = "2^-1..2^-3".parse().unwrap();
    for seed in 0..3 {
        let data = generate_dataset(&d, &d.behavior(), 250, seed).unwrap();
        let model = RewardModel::constant(2, 2, -1.0, 0.5).unwrap();
        let ctx =
            TrialContext::from_parts(Problem::Synthetic(d), data, Some(model), None, true).unwrap();
        for sn in [true, false] {
            let kis = EstimatorSpec::new(EstimatorKind::Kis, BandwidthMode::Kallus);
            let kmis = EstimatorSpec::new(EstimatorKind::Kmis, BandwidthMode::Kallus);
            let choice = BandwidthChoice::Fixed(0.3);
            let a = ctx.evaluate(&kis, choice, sn, &grid, "kis".into()).unwrap();
            let b = ctx
                .evaluate(&kmis, choice, sn, &grid, "kmis".into())
                .unwrap();
            assert_eq!(a.report.estimate.to_bits(), b.report.estimate.to_bits());

            // Zero bias constant: the closed form falls back to the grid median.
            let k = ctx
                .evaluate(&kis, BandwidthChoice::Kallus, sn, &grid, "kis".into())
                .unwrap();
            assert!(k.bandwidth_fallback);
            assert_eq!(k.report.bandwidth, Some(0.25));
        }
    }
}

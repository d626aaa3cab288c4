//! End-to-end acceptance checks, one line per criterion. The heavy
//! criteria fit one reward network per trial, so this target takes a while
//! on a single core.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use kmis::config::{
    BandwidthMode, DomainSpec, EstimatorKind, EstimatorSpec, ExperimentConfig, Problem,
    RewardOverrides, Sweep,
};
use kmis::harness::{aggregate, run_experiment, Aggregate, BandwidthChoice, Needs, TrialContext};
use kmis_core::bandwidth::{optimal_bandwidth, BandwidthGrid, LomseConstants};
use kmis_core::domains::{
    make_abs_error, make_multimodal, make_quadratic, true_value_mc, QUADRATIC_FORM,
};
use kmis_core::estimators::{kernel_is, kmis_estimate};
use kmis_core::metric::optimal_metric;
use kmis_core::numerics::{
    kernel_roughness, sym_eig, SquareMatrix, SymMatrix, TruncatedNormal, DEFAULT_ZERO_TOL_REL,
};
use kmis_core::policies::generate_dataset;
use kmis_core::reward_model::{fd_hessian, fit, RewardConfig, RewardModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const TRIALS: usize = 20;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

fn random_basis(d: usize, rng: &mut ChaCha8Rng) -> SquareMatrix {
    let v: Vec<f64> = (0..d * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    sym_eig(
        &SymMatrix::from_row_major(d, &v).unwrap(),
        DEFAULT_ZERO_TOL_REL,
    )
    .unwrap()
    .eigenvectors
}

fn c1_metric_exactness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_det, mut worst_trace) = (0.0f64, 0.0f64);
    for i in 0..1000 {
        let d = 2 + i % 5;
        let u = random_basis(d, &mut rng);
        let mut lam: Vec<f64> = (0..d)
            .map(|_| {
                let m = 10f64.powf(rng.random_range(-1.0..1.0));
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        lam[0] = lam[0].abs();
        lam[1] = -lam[1].abs();
        let h = SymMatrix::from_spectrum(&u, &lam).unwrap();
        let a = optimal_metric(&h).unwrap();
        let e = sym_eig(&a, DEFAULT_ZERO_TOL_REL).unwrap();
        let det: f64 = e.eigenvalues.iter().product();
        // tr(A^-1 H) = sum_k v_k' H v_k / mu_k over the spectrum of A.
        let trace: f64 = (0..d)
            .map(|k| h.quadratic_form(&e.eigenvectors.column(k)) / e.eigenvalues[k])
            .sum();
        worst_det = worst_det.max((det - 1.0).abs());
        worst_trace = worst_trace.max(trace.abs() / h.max_abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst_det <= 1e-6 && worst_trace <= 1e-8 && secs < 5.0,
        format!("max |det-1| {worst_det:.2e}, max |tr(A^-1 H)|/|H| {worst_trace:.2e}, {secs:.2} s"),
    )
}

fn c2_closed_forms() -> Verdict {
    let h = optimal_bandwidth(&LomseConstants {
        c_b: 1.0,
        c_v: 1.0,
        n: 32,
        d_a: 2,
    })
    .unwrap();
    let a = optimal_metric(&SymMatrix::from_diagonal(&[2.0, -2.0]).unwrap()).unwrap();
    let identity_err = max_abs_diff(a.as_slice(), &[1.0, 0.0, 0.0, 1.0]);

    let d = make_quadratic();
    let s = [0.3, -0.4];
    let hess = fd_hessian(|x| d.mean_reward(&s, x), &d.target().act(&s).unwrap()).unwrap();
    let q = optimal_metric(&hess).unwrap();
    let eig = sym_eig(&q, DEFAULT_ZERO_TOL_REL).unwrap().eigenvalues;
    let eig_err = max_abs_diff(&eig, &[10f64.sqrt(), 10f64.sqrt().recip()]);
    let exact_hess = max_abs_diff(
        hess.as_slice(),
        &[
            -2.0 * QUADRATIC_FORM[0][0],
            -2.0 * QUADRATIC_FORM[0][1],
            -2.0 * QUADRATIC_FORM[1][0],
            -2.0 * QUADRATIC_FORM[1][1],
        ],
    );
    let rough_err = (kernel_roughness(2) - 1.0 / (4.0 * std::f64::consts::PI)).abs();
    verdict(
        (h - 0.5).abs() <= 1e-12 && identity_err <= 1e-12 && eig_err <= 1e-6 && rough_err <= 1e-15,
        format!(
            "h* err {:.1e}, A*=I err {identity_err:.1e}, quadratic A* eig err {eig_err:.1e} (fd Hessian err {exact_hess:.1e}), R(K) err {rough_err:.1e}",
            (h - 0.5).abs()
        ),
    )
}

fn c3_identity_fallback() -> Verdict {
    let mut identical = 0;
    let mut checked = 0;
    for seed in 0..10u64 {
        let d = if seed % 2 == 0 {
            make_quadratic()
        } else {
            make_abs_error(seed as usize % 4)
        };
        let data = generate_dataset(&d, &d.behavior(), 2000, 500 + seed).unwrap();
        let (ds, da) = d.dims();
        let model = RewardModel::constant(ds, da, -0.7, 0.3).unwrap();
        for (h, sn) in [(0.5, true), (0.2, false)] {
            let a = kmis_estimate(&data, &d.target(), &model, h, sn).unwrap();
            let b = kernel_is(&data, &d.target(), h, sn, None).unwrap();
            checked += 1;
            if a.estimate.to_bits() == b.estimate.to_bits()
                && a.std_error.to_bits() == b.std_error.to_bits()
            {
                identical += 1;
            }
        }
    }
    verdict(
        identical == checked,
        format!("{identical}/{checked} bit-identical over 10 datasets"),
    )
}

fn pct(n: usize, d: usize) -> String {
    format!("{n}/{d}")
}

/// Quadratic-domain trials at N = 10k with the model and metrics ready,
/// shared by the Kallus and fixed-bandwidth comparisons.
fn quadratic_contexts() -> Vec<TrialContext> {
    let problem = Problem::Synthetic(make_quadratic());
    let reward = RewardConfig::synthetic();
    (0..TRIALS as u64)
        .into_par_iter()
        .map(|t| {
            TrialContext::prepare(&problem, Some(10_000), 1000 + t, &reward, Needs::all()).unwrap()
        })
        .collect()
}

fn sq_errors(
    ctxs: &[TrialContext],
    kind: EstimatorKind,
    choice: BandwidthChoice,
    grid: &BandwidthGrid,
) -> Vec<f64> {
    let spec = EstimatorSpec::new(kind, BandwidthMode::Kallus);
    ctxs.par_iter()
        .map(|c| {
            let e = c
                .evaluate(&spec, choice, true, grid, kind.as_str().into())
                .unwrap();
            let err = e.report.estimate - c.problem.true_value();
            err * err
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn c4_mse_reduction(ctxs: &[TrialContext], grid: &BandwidthGrid) -> Verdict {
    let kis = sq_errors(ctxs, EstimatorKind::Kis, BandwidthChoice::Kallus, grid);
    let kmis = sq_errors(ctxs, EstimatorKind::Kmis, BandwidthChoice::Kallus, grid);
    let wins = kis.iter().zip(&kmis).filter(|(a, b)| b < a).count();
    let (mk, mm) = (mean(&kis), mean(&kmis));
    verdict(
        mm < mk && wins * 10 >= 7 * kis.len(),
        format!(
            "MSE kmis {mm:.4} vs kis {mk:.4}, kmis wins {}",
            pct(wins, kis.len())
        ),
    )
}

fn c5_bandwidth_sweep(ctxs: &[TrialContext], grid: &BandwidthGrid) -> Verdict {
    let sweep = BandwidthGrid::powers_of_two(1, 5).unwrap();
    let mut better = 0;
    let mut cells = Vec::new();
    for &h in sweep.values() {
        let kis = mean(&sq_errors(
            ctxs,
            EstimatorKind::Kis,
            BandwidthChoice::Fixed(h),
            grid,
        ));
        let kmis = mean(&sq_errors(
            ctxs,
            EstimatorKind::Kmis,
            BandwidthChoice::Fixed(h),
            grid,
        ));
        if kmis <= kis {
            better += 1;
        }
        cells.push(format!("h={h}: {kmis:.3}/{kis:.3}"));
    }
    verdict(
        better >= 3,
        format!(
            "kmis <= kis at {better}/5 bandwidths (kmis/kis MSE {})",
            cells.join(", ")
        ),
    )
}

fn experiment(
    domain: DomainSpec,
    estimators: &[EstimatorKind],
    sweep: Sweep,
    n: Option<usize>,
    seed: u64,
) -> Vec<Aggregate> {
    let config = ExperimentConfig {
        domain,
        estimators: estimators
            .iter()
            .map(|k| EstimatorSpec::new(*k, BandwidthMode::Kallus))
            .collect(),
        sweep,
        sample_size: n,
        n_trials: TRIALS,
        base_seed: seed,
        self_normalize: true,
        grid: kmis::config::DEFAULT_GRID.into(),
        reward: RewardOverrides::default(),
        metrics_rows: 0,
        output: None,
    };
    let out = run_experiment(&config, Path::new("."), None).unwrap();
    assert_eq!(out.error_count(), 0, "estimator errors in acceptance run");
    aggregate(&out.records).unwrap()
}

fn find<'a>(aggs: &'a [Aggregate], sweep_value: f64, estimator: &str) -> &'a Aggregate {
    aggs.iter()
        .find(|a| a.sweep_value == sweep_value && a.estimator == estimator)
        .unwrap()
}

fn c6_bias_dominance() -> Verdict {
    let aggs = experiment(
        DomainSpec::AbsError { dummy_dims: 0 },
        &[EstimatorKind::Kis, EstimatorKind::Kmis],
        Sweep::DummyDims {
            values: vec![0, 2, 6],
        },
        Some(10_000),
        3000,
    );
    let shares: Vec<f64> = [0.0, 2.0, 6.0]
        .iter()
        .map(|k| {
            let a = find(&aggs, *k, "kis-kallus");
            a.bias_sq / a.mse
        })
        .collect();
    let monotone = shares.windows(2).all(|w| w[1] >= w[0]);
    let (kis8, kmis8) = (
        find(&aggs, 6.0, "kis-kallus").mse,
        find(&aggs, 6.0, "kmis-kallus").mse,
    );
    verdict(
        monotone && kmis8 < kis8,
        format!(
            "kis bias^2 share at D_A=2,4,8: {:.3}, {:.3}, {:.3}; D_A=8 MSE kmis {kmis8:.5} vs kis {kis8:.5}",
            shares[0], shares[1], shares[2]
        ),
    )
}

fn c7_consistency() -> Verdict {
    let d = make_quadratic();
    let mc = true_value_mc(&d, 200_000, 77);
    let mc_ok = (mc.mean - d.true_value()).abs() <= 3.0 * mc.std_error && d.true_value() == 0.0;
    let aggs = experiment(
        DomainSpec::Quadratic {
            noise_sd: kmis::config::DEFAULT_NOISE_SD,
        },
        &[EstimatorKind::Kis, EstimatorKind::Kmis],
        Sweep::SampleSize {
            values: vec![2500, 40_000],
        },
        None,
        7000,
    );
    let mut ok = mc_ok;
    let mut parts = vec![format!(
        "true value {} (mc {:.2e} +- {:.1e})",
        d.true_value(),
        mc.mean,
        mc.std_error
    )];
    for est in ["kis-kallus", "kmis-kallus"] {
        let (small, large) = (find(&aggs, 2500.0, est).mse, find(&aggs, 40_000.0, est).mse);
        ok &= large < small;
        parts.push(format!("{est} MSE {small:.4} -> {large:.4}"));
    }
    verdict(ok, parts.join("; "))
}

fn c8_multimodal() -> Verdict {
    let d = make_multimodal();
    let config = ExperimentConfig {
        domain: DomainSpec::Multimodal,
        estimators: vec![
            EstimatorSpec::new(EstimatorKind::Kmis, BandwidthMode::Kallus),
            EstimatorSpec::new(EstimatorKind::Kmis, BandwidthMode::Slope),
            EstimatorSpec::new(EstimatorKind::Dm, BandwidthMode::Kallus),
        ],
        sweep: Sweep::SampleSize {
            values: vec![40_000],
        },
        sample_size: None,
        n_trials: TRIALS,
        base_seed: 8000,
        self_normalize: true,
        grid: kmis::config::DEFAULT_GRID.into(),
        reward: RewardOverrides::default(),
        metrics_rows: 0,
        output: None,
    };
    let out = run_experiment(&config, Path::new("."), None).unwrap();
    let dev = |label: &str| -> (f64, usize, f64) {
        let rows: Vec<_> = out
            .records
            .iter()
            .filter(|r| r.estimator == label)
            .collect();
        let devs: Vec<f64> = rows
            .iter()
            .map(|r| r.estimate.map_or(f64::INFINITY, |e| (e + 1.0).abs()))
            .collect();
        let h: Vec<f64> = rows.iter().filter_map(|r| r.bandwidth).collect();
        (mean(&devs), devs.len(), mean(&h))
    };
    let (m, n, h) = dev("kmis-kallus");
    let (m_slope, _, h_slope) = dev("kmis-slope");
    let (m_dm, _, _) = dev("dm");
    verdict(
        d.true_value() == -1.0 && n == TRIALS && m <= 0.1,
        format!(
            "true value {}, kmis-kallus mean |rho+1| {m:.4} over {n} seeds \
             (mean h {h:.3}, {} failed rows); for reference kmis-slope {m_slope:.4} \
             (mean h {h_slope:.3}), dm {m_dm:.4}",
            d.true_value(),
            out.error_count()
        ),
    )
}

fn c9_numerics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut eig_err = 0.0f64;
    for i in 0..1000 {
        let d = 1 + i % 8;
        let v: Vec<f64> = (0..d * d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let m = SymMatrix::from_row_major(d, &v).unwrap();
        let e = sym_eig(&m, DEFAULT_ZERO_TOL_REL).unwrap();
        eig_err = eig_err.max(max_abs_diff(e.reconstruct().as_slice(), m.as_slice()));
        let vtv = e.eigenvectors.transpose().matmul(&e.eigenvectors);
        eig_err = eig_err.max(max_abs_diff(
            vtv.as_slice(),
            SquareMatrix::identity(d).unwrap().as_slice(),
        ));
    }

    let q = make_quadratic();
    let mut fd_err = 0.0f64;
    for _ in 0..50 {
        let s = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let a = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let h = fd_hessian(|x| q.mean_reward(&s, x), &a).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                fd_err = fd_err.max((h.get(i, j) + 2.0 * QUADRATIC_FORM[i][j]).abs());
            }
        }
    }

    let data = generate_dataset(&q, &q.behavior(), 800, 4).unwrap();
    let cfg = RewardConfig {
        max_epochs: 5,
        ..RewardConfig::synthetic()
    };
    let (model, _) = fit(&data, &cfg, 6).unwrap();
    let mut grad_err = 0.0f64;
    for i in 0..50 {
        let (s, a) = (data.state(i), data.action(i));
        let g = model.mean_gradient(s, a).unwrap();
        for k in 0..4 {
            let eps = 1e-5;
            let mut xp: Vec<f64> = s.iter().chain(a).copied().collect();
            let mut xm = xp.clone();
            xp[k] += eps;
            xm[k] -= eps;
            let f = |x: &[f64]| model.predict_mean(&x[..2], &x[2..]).unwrap();
            let fd = (f(&xp) - f(&xm)) / (2.0 * eps);
            grad_err = grad_err.max((fd - g[k]).abs() / g[k].abs().max(1e-3));
        }
    }

    let mut tn_err = 0.0f64;
    for _ in 0..50 {
        let (mean, sd) = (rng.random_range(-3.0..3.0), rng.random_range(0.1..3.0));
        let lo = rng.random_range(-4.0..0.0);
        let hi = lo + rng.random_range(0.5..6.0);
        let tn = TruncatedNormal::new(mean, sd, lo, hi).unwrap();
        let n = 20_000;
        let step = (hi - lo) / n as f64;
        let mut acc = 0.5 * (tn.density(lo) + tn.density(hi));
        for k in 1..n {
            acc += tn.density(lo + k as f64 * step);
        }
        tn_err = tn_err.max((acc * step - 1.0).abs());
    }
    verdict(
        eig_err <= 1e-10 && fd_err <= 1e-4 && grad_err <= 1e-4 && tn_err <= 1e-4,
        format!("eig {eig_err:.1e}, fd Hessian {fd_err:.1e}, gradient {grad_err:.1e} rel, truncated normal {tn_err:.1e}"),
    )
}

fn c10_cli_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let config = r#"{
        "domain": {"kind": "abs_error"},
        "estimators": [{"kind": "dm"}, {"kind": "kis"}, {"kind": "kmis"}, {"kind": "kmis", "bandwidth": "slope"}, {"kind": "disc", "bins": 4}],
        "sweep": {"axis": "sample_size", "values": [400, 800]},
        "n_trials": 4,
        "base_seed": 12,
        "reward": {"max_epochs": 8},
        "metrics_rows": 20
    }"#;
    let cfg_path = dir.path().join("config.json");
    std::fs::write(&cfg_path, config).unwrap();
    let files = ["trials.csv", "summary.csv", "summary.json", "metrics.csv"];
    let mut runs: Vec<Vec<Vec<u8>>> = Vec::new();
    let mut codes = Vec::new();
    for (i, threads) in ["1", "1", "4"].iter().enumerate() {
        let out = dir.path().join(format!("run{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_kmis"))
            .args(["run", "--config"])
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out)
            .env("KMIS_THREADS", threads)
            .output()
            .unwrap();
        codes.push(status.status.code());
        runs.push(
            files
                .iter()
                .map(|f| std::fs::read(out.join(f)).unwrap_or_default())
                .collect(),
        );
    }
    let same = runs.iter().all(|r| r == &runs[0]) && runs[0].iter().all(|f| !f.is_empty());
    let ok_codes = codes.iter().all(|c| *c == Some(0));
    verdict(
        same && ok_codes,
        format!("3 runs (threads 1, 1, 4): outputs identical {same}, exit codes {codes:?}"),
    )
}

/// Criterion ids given on the command line (`-- C6 C7`); empty means all.
fn selection() -> Vec<String> {
    std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect()
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let only = selection();
    let total = Instant::now();
    let grid: BandwidthGrid = kmis::config::DEFAULT_GRID.parse().unwrap();
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut run = |id: &'static str, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            return;
        }
        let t = Instant::now();
        let v = f();
        println!(
            "{} {id:>3} {name}: {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        results.push((id, v));
    };

    run("C1", "metric exactness", &mut c1_metric_exactness);
    run("C2", "closed-form values", &mut c2_closed_forms);
    run("C3", "identity fallback", &mut c3_identity_fallback);
    run("C9", "numerics suite", &mut c9_numerics);
    run("C10", "run determinism", &mut c10_cli_determinism);
    // The first of C4/C5 to run pays for the shared quadratic fits.
    let mut ctxs: Option<Vec<TrialContext>> = None;
    run("C4", "MSE reduction, quadratic N=10k", &mut || {
        c4_mse_reduction(ctxs.get_or_insert_with(quadratic_contexts), &grid)
    });
    run("C5", "bandwidth sweep, quadratic N=10k", &mut || {
        c5_bandwidth_sweep(ctxs.get_or_insert_with(quadratic_contexts), &grid)
    });
    drop(ctxs);
    run("C6", "bias dominance, abs-error", &mut c6_bias_dominance);
    run("C7", "consistency, quadratic", &mut c7_consistency);
    run("C8", "multimodal oracle, N=40k", &mut c8_multimodal);

    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} passed in {:.0} s",
        results.len() - failed.len(),
        results.len(),
        total.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        eprintln!("failed criteria: {}", failed.join(", "));
        std::process::exit(1);
    }
}

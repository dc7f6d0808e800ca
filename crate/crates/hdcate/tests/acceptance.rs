//! Acceptance suite: scaled reproductions of the reference coverage and
//! accuracy results plus the fast property backbone. Each criterion prints
//! one PASS/FAIL line.

#![allow(clippy::needless_range_loop)]

use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use rayon::prelude::*;

use hdcate::dgp::{gen_dgp1, Design, DgpSpec};
use hdcate::estimator::{cate_cross_fit, cate_full_sample, EstimatorOptions, EvalGrid, Method};
use hdcate::inference::{
    bootstrap_curves, bootstrap_replicate_curve, critical_value, pointwise_band, uniform_band,
    BandSide,
};
use hdcate::local::{local_linear_fit, KernelSpec};
use hdcate::mat::Mat;
use hdcate::mc::{aggregate, run_replication, GridSpec, McConfig, McReport, RepRecord};
use hdcate::norm::logistic_cdf;
use hdcate::penalized::{kkt_violation, lasso_linear, null_threshold, DesignMatrix, Family};
use hdcate::rng::stream_rng;
use hdcate::score::dr_score;

use rand_distr::{Distribution, StandardNormal};

fn report_line(name: &str, pass: bool, details: &str) {
    println!("{name}: {} ({details})", if pass { "PASS" } else { "FAIL" });
}

// The criteria share one worker pool; running them one at a time keeps the
// per-criterion runtime budgets meaningful. A panicking criterion (an
// expected red) must not poison the lock for the rest.
static SERIAL: Mutex<()> = Mutex::new(());

fn serial_guard() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

struct SharedRun {
    report: McReport,
    records: Vec<RepRecord>,
}

fn run_config(config: &McConfig) -> SharedRun {
    let records: Vec<RepRecord> = (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(config, rep).expect("replication failed hard"))
        .collect();
    let report = aggregate(config, &records).expect("aggregation failed");
    SharedRun { report, records }
}

/// The shared strict-sparse coverage run: 400 replications, N=1000, p=100,
/// K=4, B=500, 201 grid points on [-1,1].
fn ac1_run() -> &'static SharedRun {
    static RUN: OnceLock<SharedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let config = McConfig {
            dgp: DgpSpec {
                design: Design::StrictSparse,
                n: 1000,
                p: 100,
                seed: 0,
            },
            replications: 400,
            method: Method::CrossFit { k: 4 },
            bootstrap_reps: 500,
            alphas: vec![0.05],
            grid: Some(GridSpec {
                lo: -1.0,
                hi: 1.0,
                points: 201,
            }),
            eval_points: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            root_seed: 20_240_501,
        };
        run_config(&config)
    })
}

#[test]
fn ac1_uniform_coverage_strict_sparse_cross_fit() {
    let _serial = serial_guard();
    let run = ac1_run();
    let emp = run.report.alpha_stats[0].emp;
    let pass = (0.91..=0.98).contains(&emp);
    report_line(
        "AC1 uniform coverage (strict-sparse, cross-fit, 95%)",
        pass,
        &format!(
            "EMP = {emp:.3}, accept [0.91, 0.98], {} replications, {} failed",
            run.report.replications_attempted, run.report.replications_failed
        ),
    );
    assert!(pass, "EMP {emp} outside [0.91, 0.98]");
}

#[test]
fn ac2_critical_value_magnitude() {
    let _serial = serial_guard();
    let run = ac1_run();
    let mcri = run.report.alpha_stats[0].mcri;
    let min_crit = run
        .records
        .iter()
        .filter(|r| !r.failed)
        .map(|r| r.crit[0])
        .fold(f64::INFINITY, f64::min);

    let pass_floor = min_crit > 1.96;
    report_line(
        "AC2b critical values exceed the pointwise 1.96 in every replication",
        pass_floor,
        &format!("min critical value = {min_crit:.3}"),
    );

    let pass_window = (2.60..=2.90).contains(&mcri);
    report_line(
        "AC2a mean two-sided critical value",
        pass_window,
        &format!("mean = {mcri:.3}, accept [2.60, 2.90]"),
    );

    assert!(
        pass_floor,
        "a replication produced a critical value <= 1.96"
    );
    // Known incompatibility: with the bandwidth rule 1.06*sigma*N^(-2/7)
    // (h = 0.147 at N=1000) the bootstrap sup statistic's mean 95% quantile
    // sits near 3.15-3.20; the reference Mcri of ~2.75 is reproducible only
    // at a substantially wider (non-undersmoothed, Silverman-scale)
    // bandwidth. The window is asserted as stated rather than widened.
    assert!(
        pass_window,
        "mean critical value {mcri:.3} outside [2.60, 2.90]; see the acceptance notes"
    );
}

#[test]
fn ac3_pointwise_accuracy_strict_sparse() {
    let _serial = serial_guard();
    let run = ac1_run();
    let at0 = run
        .report
        .eval_stats
        .iter()
        .find(|e| e.x1 == 0.0)
        .expect("eval point 0 present");
    let pass_rmse = (0.11..=0.19).contains(&at0.rmse);
    let pass_bias = at0.bias.abs() <= 0.03;
    report_line(
        "AC3 pointwise accuracy at x = 0",
        pass_rmse && pass_bias,
        &format!(
            "RMSE = {:.3} accept [0.11, 0.19]; |BIAS| = {:.3} accept <= 0.03",
            at0.rmse,
            at0.bias.abs()
        ),
    );
    assert!(pass_rmse, "RMSE(0) {} outside [0.11, 0.19]", at0.rmse);
    assert!(pass_bias, "|BIAS(0)| {} exceeds 0.03", at0.bias.abs());
}

#[test]
fn ac4_cross_fit_vs_full_sample_rmse() {
    let _serial = serial_guard();
    // Shared 200-replication accuracy comparison at N=500, p=100; point
    // estimates only, no bootstrap needed.
    let n_reps = 200u64;
    let grid = EvalGrid::equally_spaced(-1.0, 1.0, 3).unwrap(); // x = 0 is index 1
    let opts = EstimatorOptions::default();
    let errors: Vec<(f64, f64)> = (0..n_reps)
        .into_par_iter()
        .map(|rep| {
            let spec = DgpSpec {
                design: Design::StrictSparse,
                n: 500,
                p: 100,
                seed: hdcate::rng::child_seed(424_242, rep),
            };
            let g = hdcate::dgp::generate(&spec).unwrap();
            let cf = cate_cross_fit(&g.sample, 4, &grid, None, rep, &opts).unwrap();
            let fs = cate_full_sample(&g.sample, &grid, None, &opts).unwrap();
            (cf.tau[1] - 10.0, fs.tau[1] - 10.0)
        })
        .collect();
    let rmse = |sel: &dyn Fn(&(f64, f64)) -> f64| {
        (errors.iter().map(|e| sel(e) * sel(e)).sum::<f64>() / errors.len() as f64).sqrt()
    };
    let rmse_cf = rmse(&|e| e.0);
    let rmse_fs = rmse(&|e| e.1);
    let pass = rmse_cf <= 1.10 * rmse_fs;
    report_line(
        "AC4 cross-fit vs full-sample RMSE at x = 0",
        pass,
        &format!("RMSE_cf = {rmse_cf:.3}, RMSE_full = {rmse_fs:.3}, accept ratio <= 1.10"),
    );
    assert!(pass, "RMSE_cf {rmse_cf} > 1.10 * RMSE_full {rmse_fs}");
}

#[test]
fn ac5_uniform_coverage_approx_sparse() {
    let _serial = serial_guard();
    let config = McConfig {
        dgp: DgpSpec {
            design: Design::ApproxSparse { r2: 0.1 },
            n: 1000,
            p: 200,
            seed: 0,
        },
        replications: 300,
        method: Method::CrossFit { k: 4 },
        bootstrap_reps: 500,
        alphas: vec![0.05],
        grid: Some(GridSpec {
            lo: -1.0,
            hi: 1.0,
            points: 201,
        }),
        eval_points: vec![0.0],
        root_seed: 50_505,
    };
    let run = run_config(&config);
    let emp = run.report.alpha_stats[0].emp;
    let pass = (0.90..=0.98).contains(&emp);
    report_line(
        "AC5 uniform coverage (approx-sparse R2=0.1, p=200, cross-fit, 95%)",
        pass,
        &format!(
            "EMP = {emp:.3}, accept [0.90, 0.98], {} failed",
            run.report.replications_failed
        ),
    );
    assert!(pass, "EMP {emp} outside [0.90, 0.98]");
}

#[test]
fn ac6_property_suite_fast() {
    let _serial = serial_guard();
    let start = Instant::now();

    // KKT stationarity on 50 randomized lasso instances.
    for seed in 0..50u64 {
        let n = 40 + (seed % 4) as usize * 20;
        let p = 5 + (seed % 3) as usize * 7;
        let mut rng = stream_rng(31_000 + seed, 90, 0);
        let data: Vec<f64> = (0..n * p)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let design = DesignMatrix::new(Mat::new(n, p, data).unwrap()).unwrap();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let row = design.values().row(i);
                let noise: f64 = StandardNormal.sample(&mut rng);
                row[0] - 0.7 * row[p - 1] + noise
            })
            .collect();
        let thr = null_threshold(&design, &y, Family::Linear).unwrap();
        let lambda = thr * (0.05 + 0.9 * (seed as f64 / 50.0));
        let fit = lasso_linear(&design, &y, lambda).unwrap();
        let viol = kkt_violation(&design, &y, &fit).unwrap();
        assert!(viol <= 1e-6, "seed {seed}: KKT violation {viol}");
    }

    // Local linear regression is exact on linear data.
    {
        let mut rng = stream_rng(32_000, 90, 0);
        let xs: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r: Vec<f64> = xs.iter().map(|&x| -1.5 + 0.8 * x).collect();
        let m = Mat::new(50, 1, xs).unwrap();
        let kernel = KernelSpec::gaussian(vec![0.4]).unwrap();
        let fit = local_linear_fit(&m, &r, &vec![1.0; 50], &[0.3], &kernel).unwrap();
        assert!((fit.intercept - (-1.5 + 0.8 * 0.3)).abs() < 1e-9);
        assert!((fit.slope[0] - 0.8).abs() < 1e-9);
    }

    // Multiplier neutrality, fold-mean identity, variance oracle, nesting.
    let g = gen_dgp1(300, 10, 77).unwrap();
    let grid = EvalGrid::equally_spaced(-0.9, 0.9, 31).unwrap();
    let opts = EstimatorOptions::default();
    let curve = cate_cross_fit(&g.sample, 4, &grid, None, 3, &opts).unwrap();

    // Unit multipliers reproduce the curve exactly: zero sup statistics.
    let boot_tau = bootstrap_replicate_curve(&g.sample, &curve, &vec![1.0; 300]).unwrap();
    let scale = curve.nh().sqrt();
    let sup2 = (0..31)
        .map(|gi| (scale * (boot_tau[gi] - curve.tau[gi]) / curve.sigma[gi]).abs())
        .fold(0.0_f64, f64::max);
    assert_eq!(sup2, 0.0, "unit multipliers must give zero sup statistics");

    // Fold-mean identity.
    let fold_tau = curve.fold_tau.as_ref().unwrap();
    for gi in 0..31 {
        let mean: f64 = fold_tau.iter().map(|f| f[gi]).sum::<f64>() / 4.0;
        assert!((curve.tau[gi] - mean).abs() < 1e-12);
    }

    // Variance formula equals a direct recomputation (full-sample curve).
    {
        let full = cate_full_sample(&g.sample, &grid, Some(vec![0.35]), &opts).unwrap();
        let rows: Vec<usize> = (0..300).collect();
        let scores = hdcate::score::score_vector(&g.sample, &rows, &full.fold_fits[0])
            .unwrap()
            .values;
        let x1 = g.sample.x1_matrix();
        for (gi, pt) in grid.points.iter().enumerate() {
            let mut ksum = 0.0;
            let mut sq = 0.0;
            for i in 0..300 {
                let z: f64 = (x1.get(i, 0) - pt[0]) / 0.35;
                let kw = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                ksum += kw;
                let r = scores[i] - full.tau[gi];
                sq += r * r * kw * kw;
            }
            let nh = 300.0 * 0.35;
            let fhat = ksum / nh;
            let expect = (sq / (nh * fhat * fhat)).sqrt();
            assert!((full.sigma[gi] - expect).abs() < 1e-10);
        }
    }

    // Empirical quantile convention.
    let draws: Vec<f64> = (1..=100).map(f64::from).collect();
    assert_eq!(critical_value(&draws, 0.05).unwrap(), 95.0);
    assert_eq!(critical_value(&[3.0, 1.0, 2.0], 1.0 / 3.0).unwrap(), 2.0);

    // Toeplitz quadratic form.
    assert!((hdcate::dgp::toeplitz_quadform(2) - 1.3125).abs() < 1e-15);

    // Band nesting across levels.
    let draws = bootstrap_curves(&g.sample, &curve, 200, 9).unwrap();
    let mut previous: Option<hdcate::inference::ConfidenceBand> = None;
    for alpha in [0.10, 0.05, 0.01] {
        let c = critical_value(&draws.sup_two_sided, alpha).unwrap();
        let band = uniform_band(&curve, c, alpha, BandSide::Two).unwrap();
        if let Some(prev) = &previous {
            for gi in 0..31 {
                assert!(band.lower[gi] <= prev.lower[gi]);
                assert!(band.upper[gi] >= prev.upper[gi]);
            }
        }
        previous = Some(band);
    }
    // Pointwise band is inside the uniform band at the same level.
    let pw = pointwise_band(&curve, 0.05, BandSide::Two).unwrap();
    let c = critical_value(&draws.sup_two_sided, 0.05).unwrap();
    if c >= pw.critical_value {
        let un = uniform_band(&curve, c, 0.05, BandSide::Two).unwrap();
        for gi in 0..31 {
            assert!(un.lower[gi] <= pw.lower[gi] && pw.upper[gi] <= un.upper[gi]);
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    let pass = elapsed <= 60.0;
    report_line(
        "AC6 property suite",
        pass,
        &format!("all checks passed in {elapsed:.1}s (budget 60s)"),
    );
    assert!(pass, "property suite took {elapsed:.1}s");
}

#[test]
fn ac7_double_robustness_at_scale() {
    let _serial = serial_guard();
    let start = Instant::now();
    let n = 100_000;
    let g = gen_dgp1(n, 8, 123_456).unwrap();
    let s = &g.sample;
    let true_mu1 = |row: &[f64]| 10.0 + row[0] + row[1] + row[2] + row[3];
    let true_pi =
        |row: &[f64]| logistic_cdf(0.5 * (row[0] + row[1] + row[2] + row[3])).clamp(0.01, 0.99);

    let mean_and_se = |psi: &[f64]| {
        let m = psi.iter().sum::<f64>() / psi.len() as f64;
        let var = psi.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / psi.len() as f64;
        (m, (var / psi.len() as f64).sqrt())
    };

    // True outcome regressions, deliberately wrong (clamped) propensity.
    let psi_wrong_pi: Vec<f64> = (0..n)
        .map(|i| {
            let row = s.x().row(i);
            let wrong_pi = logistic_cdf(0.8 * row[4] - 0.2).clamp(0.01, 0.99);
            dr_score(s.y()[i], s.d()[i], 0.0, true_mu1(row), wrong_pi)
        })
        .collect();
    let (m1, se1) = mean_and_se(&psi_wrong_pi);
    let pass1 = (m1 - 10.0).abs() <= 4.0 * se1;

    // True propensity, deliberately wrong outcome regressions.
    let psi_wrong_mu: Vec<f64> = (0..n)
        .map(|i| {
            let row = s.x().row(i);
            let wrong_mu1 = 3.0 - 0.5 * row[0] + row[5];
            let wrong_mu0 = 1.0 + row[6];
            dr_score(s.y()[i], s.d()[i], wrong_mu0, wrong_mu1, true_pi(row))
        })
        .collect();
    let (m2, se2) = mean_and_se(&psi_wrong_mu);
    let pass2 = (m2 - 10.0).abs() <= 4.0 * se2;

    let elapsed = start.elapsed().as_secs_f64();
    let pass = pass1 && pass2 && elapsed <= 30.0;
    report_line(
        "AC7 double robustness at scale",
        pass,
        &format!(
            "wrong-pi mean = {m1:.3} (se {se1:.3}), wrong-mu mean = {m2:.3} (se {se2:.3}), \
             target 10 within 4 se; {elapsed:.1}s (budget 30s)"
        ),
    );
    assert!(pass1, "wrong-pi mean {m1} more than 4 se from 10");
    assert!(pass2, "wrong-mu mean {m2} more than 4 se from 10");
    assert!(elapsed <= 30.0, "took {elapsed:.1}s");
}

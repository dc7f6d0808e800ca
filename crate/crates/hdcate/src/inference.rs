//! Multiplier bootstrap of the second stage and pointwise/uniform
//! confidence bands.
//!
//! Bootstrap draws reuse the frozen first-stage fits, the original fold
//! assignment, and the original bandwidth; only the observation multipliers
//! change. Each draw recomputes the weighted local linear regressions over
//! the grid and records the sup of the standardized deviations.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{build_stages, CateCurve, EvalGrid, Stage};
use crate::local::KernelSpec;
use crate::norm::norm_quantile;
use crate::nuisance::Sample;
use crate::rng::{purpose, stream_rng};

/// Law of the bootstrap multipliers. Only the mean-one variance-one normal
/// law ships; the enum leaves room for other sub-exponential laws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    NormalMean1Var1,
}

/// Sup statistics across bootstrap replications.
#[derive(Debug, Clone)]
pub struct BootstrapDraws {
    pub sup_one_sided: Vec<f64>,
    pub sup_two_sided: Vec<f64>,
    pub seed: u64,
    pub weight_law: WeightLaw,
}

impl BootstrapDraws {
    pub fn len(&self) -> usize {
        self.sup_two_sided.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sup_two_sided.is_empty()
    }
}

/// Band side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandSide {
    /// Lower bound only: the band is `(tau - C * se, +inf)`.
    Left,
    /// Upper bound only: the band is `(-inf, tau + C * se)`.
    Right,
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandScope {
    Pointwise,
    Uniform,
}

/// A confidence band over the evaluation grid.
#[derive(Debug, Clone)]
pub struct ConfidenceBand {
    pub grid: EvalGrid,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub alpha: f64,
    pub side: BandSide,
    pub critical_value: f64,
    pub scope: BandScope,
}

impl ConfidenceBand {
    /// Whether the band contains the given function values at every grid
    /// point. Non-finite band values at a point count as not covering.
    pub fn covers(&self, truth: &[f64]) -> bool {
        debug_assert_eq!(truth.len(), self.lower.len());
        truth
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(t, (lo, hi))| {
                let ok_lo = *lo == f64::NEG_INFINITY || (lo.is_finite() && lo <= t);
                let ok_hi = *hi == f64::INFINITY || (hi.is_finite() && t <= hi);
                ok_lo && ok_hi
            })
    }
}

/// Draws `n` i.i.d. multipliers with mean one and variance one.
pub fn draw_multipliers<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let law = Normal::new(1.0, 1.0).expect("valid normal parameters");
    (0..n).map(|_| law.sample(rng)).collect()
}

/// One bootstrap second-stage pass: curve estimates per grid point under the
/// given multipliers (indexed by sample row). Degenerate points fall back to
/// the original estimate so a draw never aborts.
pub(crate) fn bootstrap_replicate(
    stages: &[Stage],
    caches: &[Vec<f64>],
    grid: &EvalGrid,
    multipliers: &[f64],
    original_tau: &[f64],
) -> Vec<f64> {
    let k_f = stages.len() as f64;
    (0..grid.len())
        .map(|g| {
            let mut sum = 0.0;
            for (stage, cache) in stages.iter().zip(caches) {
                match stage.fit_at_cached(cache, g, &grid.points[g], Some(multipliers)) {
                    Some(fit) if fit.intercept.is_finite() => sum += fit.intercept,
                    _ => return original_tau[g],
                }
            }
            sum / k_f
        })
        .collect()
}

/// Recomputes the second stage under caller-supplied multipliers (indexed by
/// sample row) and returns the perturbed curve estimates over the grid.
/// Multipliers identically one reproduce the original estimates bit for bit.
pub fn bootstrap_replicate_curve(
    sample: &Sample,
    curve: &CateCurve,
    multipliers: &[f64],
) -> Result<Vec<f64>> {
    if multipliers.len() != sample.n() {
        return Err(Error::invalid("multipliers must match the sample size"));
    }
    let kernel = KernelSpec::gaussian(curve.h.clone())?;
    let stages = build_stages(
        sample,
        &curve.method,
        &curve.fold_fits,
        &curve.fold_assignment,
    )?;
    let caches: Vec<Vec<f64>> = stages
        .iter()
        .map(|s| s.kernel_cache(&curve.grid.points, &kernel))
        .collect();
    Ok(bootstrap_replicate(
        &stages,
        &caches,
        &curve.grid,
        multipliers,
        &curve.tau,
    ))
}

/// Runs `B` multiplier-bootstrap replications of the second stage and
/// records the one- and two-sided sup statistics.
///
/// Replication `b` draws its multipliers from the stream `(seed, b)`, so
/// results are independent of execution order and worker count.
pub fn bootstrap_curves(
    sample: &Sample,
    curve: &CateCurve,
    b: usize,
    seed: u64,
) -> Result<BootstrapDraws> {
    if b == 0 {
        return Err(Error::invalid("need at least one bootstrap replication"));
    }
    let kernel = KernelSpec::gaussian(curve.h.clone())?;
    let stages = build_stages(
        sample,
        &curve.method,
        &curve.fold_fits,
        &curve.fold_assignment,
    )?;
    let caches: Vec<Vec<f64>> = stages
        .iter()
        .map(|s| s.kernel_cache(&curve.grid.points, &kernel))
        .collect();

    // Only non-degenerate grid points with positive sigma enter the sup.
    let usable: Vec<usize> = (0..curve.grid.len())
        .filter(|&g| !curve.degenerate[g] && curve.sigma[g] > 0.0)
        .collect();
    if usable.is_empty() {
        return Err(Error::numerical(
            "no usable grid points: sigma vanishes or all points degenerate",
        ));
    }

    let scale = curve.nh().sqrt();
    let n = sample.n();
    let stats: Vec<(f64, f64)> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(seed, purpose::BOOTSTRAP, rep as u64);
            let xi = draw_multipliers(n, &mut rng);
            let boot_tau = bootstrap_replicate(&stages, &caches, &curve.grid, &xi, &curve.tau);
            let mut sup1 = f64::NEG_INFINITY;
            let mut sup2: f64 = 0.0;
            for &g in &usable {
                let dev = scale * (boot_tau[g] - curve.tau[g]) / curve.sigma[g];
                sup1 = sup1.max(dev);
                sup2 = sup2.max(dev.abs());
            }
            (sup1, sup2)
        })
        .collect();

    let draws = BootstrapDraws {
        sup_one_sided: stats.iter().map(|s| s.0).collect(),
        sup_two_sided: stats.iter().map(|s| s.1).collect(),
        seed,
        weight_law: WeightLaw::NormalMean1Var1,
    };
    debug_assert!(draws
        .sup_two_sided
        .iter()
        .zip(&draws.sup_one_sided)
        .all(|(two, one)| *two >= *one && *two >= 0.0));
    Ok(draws)
}

/// Empirical `(1-alpha)` quantile as the order statistic of rank
/// `ceil(B (1-alpha))`.
pub fn critical_value(draws: &[f64], alpha: f64) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::invalid("empty draw vector"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0,1)"));
    }
    let b = draws.len() as f64;
    let rank = (b * (1.0 - alpha)).ceil() as usize;
    let rank = rank.clamp(1, draws.len());
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(sorted[rank - 1])
}

fn band_from_critical(
    curve: &CateCurve,
    c: f64,
    alpha: f64,
    side: BandSide,
    scope: BandScope,
) -> ConfidenceBand {
    let scale = curve.nh().sqrt();
    let mut lower = Vec::with_capacity(curve.grid.len());
    let mut upper = Vec::with_capacity(curve.grid.len());
    for g in 0..curve.grid.len() {
        let half = c * curve.sigma[g] / scale;
        match side {
            BandSide::Left => {
                lower.push(curve.tau[g] - half);
                upper.push(f64::INFINITY);
            }
            BandSide::Right => {
                lower.push(f64::NEG_INFINITY);
                upper.push(curve.tau[g] + half);
            }
            BandSide::Two => {
                lower.push(curve.tau[g] - half);
                upper.push(curve.tau[g] + half);
            }
        }
    }
    ConfidenceBand {
        grid: curve.grid.clone(),
        lower,
        upper,
        alpha,
        side,
        critical_value: c,
        scope,
    }
}

/// Uniform confidence band from a bootstrap critical value.
pub fn uniform_band(
    curve: &CateCurve,
    c: f64,
    alpha: f64,
    side: BandSide,
) -> Result<ConfidenceBand> {
    if !(c >= 0.0) {
        return Err(Error::invalid("critical value must be nonnegative"));
    }
    Ok(band_from_critical(
        curve,
        c,
        alpha,
        side,
        BandScope::Uniform,
    ))
}

/// Pointwise band: the bootstrap critical value is replaced by the standard
/// normal quantile (`z_{1-alpha/2}` two-sided, `z_{1-alpha}` one-sided).
pub fn pointwise_band(curve: &CateCurve, alpha: f64, side: BandSide) -> Result<ConfidenceBand> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (0,1)"));
    }
    let z = match side {
        BandSide::Two => norm_quantile(1.0 - alpha / 2.0)?,
        BandSide::Left | BandSide::Right => norm_quantile(1.0 - alpha)?,
    };
    Ok(band_from_critical(
        curve,
        z,
        alpha,
        side,
        BandScope::Pointwise,
    ))
}

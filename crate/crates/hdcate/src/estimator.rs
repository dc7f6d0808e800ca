//! Full-sample and K-fold cross-fitting CATE estimators over an evaluation
//! grid, with analytic variance estimates.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::local::{kernel_weight, KernelSpec, LocalAccum, LocalFit};
use crate::nuisance::{fit_nuisance, NuisanceFit, NuisanceOptions, Sample};
use crate::rng::{purpose, stream_rng};
use crate::score::score_vector;

/// Grid points whose kernel density falls below this are flagged degenerate.
pub const DENSITY_FLOOR: f64 = 1e-6;

/// Estimation method for the second stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FullSample,
    CrossFit { k: usize },
}

/// Evaluation grid: an ordered list of points inside per-coordinate bounds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalGrid {
    pub points: Vec<Vec<f64>>,
    pub bounds: Vec<(f64, f64)>,
}

impl EvalGrid {
    /// Equally spaced one-dimensional grid on `[lo, hi]`.
    pub fn equally_spaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("grid bounds must satisfy lo < hi"));
        }
        if count < 2 {
            return Err(Error::invalid("grid needs at least 2 points"));
        }
        let points = (0..count)
            .map(|i| {
                let t = i as f64 / (count - 1) as f64;
                vec![lo * (1.0 - t) + hi * t]
            })
            .collect();
        Ok(EvalGrid {
            points,
            bounds: vec![(lo, hi)],
        })
    }

    /// Default grid for one-dimensional conditioning: `count` equally spaced
    /// points between the 2nd and 98th empirical percentiles.
    pub fn from_sample_percentiles(sample: &Sample, count: usize) -> Result<Self> {
        if sample.d_cond() != 1 {
            return Err(Error::invalid(
                "default grid is defined for one conditioning coordinate; pass an explicit grid",
            ));
        }
        let col = sample.x1_matrix().col_copy(0);
        let lo = percentile(&col, 0.02);
        let hi = percentile(&col, 0.98);
        EvalGrid::equally_spaced(lo, hi, count)
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn validate(&self, d_cond: usize) -> Result<()> {
        if self.dimension() != d_cond {
            return Err(Error::invalid("grid dimension does not match conditioning"));
        }
        for pt in &self.points {
            if pt.len() != d_cond {
                return Err(Error::invalid("grid point dimension mismatch"));
            }
            for (v, (lo, hi)) in pt.iter().zip(&self.bounds) {
                if !(v >= lo && v <= hi) {
                    return Err(Error::invalid(format!(
                        "grid point {v} outside bounds [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Empirical percentile with linear interpolation.
fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + frac * (v[hi] - v[lo])
}

/// Estimated CATE curve with per-point variance estimates and everything
/// needed to recompute the second stage (for bootstrap draws and evaluation
/// at additional points).
#[derive(Debug, Clone)]
pub struct CateCurve {
    pub grid: EvalGrid,
    /// Point estimates per grid point.
    pub tau: Vec<f64>,
    /// Slope estimates per grid point (fold average under cross-fitting).
    pub slope: Vec<Vec<f64>>,
    /// Standard-deviation-scale variance estimates per grid point.
    pub sigma: Vec<f64>,
    /// Per-point degeneracy flags (thin local design or vanishing density).
    pub degenerate: Vec<bool>,
    /// Bandwidth vector used (shared across folds and bootstrap draws).
    pub h: Vec<f64>,
    /// Total sample size.
    pub n: usize,
    pub method: Method,
    /// Nuisance fits: one for the full sample, K under cross-fitting.
    pub fold_fits: Vec<NuisanceFit>,
    /// Fold label per sample row (cross-fitting only).
    pub fold_assignment: Option<Vec<usize>>,
    /// Per-fold estimates per grid point (cross-fitting only).
    pub fold_tau: Option<Vec<Vec<f64>>>,
}

impl CateCurve {
    /// `n * prod_j h_j`, the scaling inside the standardized statistics.
    pub fn nh(&self) -> f64 {
        self.n as f64 * self.h.iter().product::<f64>()
    }

    /// Standard error of the point estimate at grid point `g`.
    pub fn standard_error(&self, g: usize) -> f64 {
        self.sigma[g] / self.nh().sqrt()
    }

    /// Evaluates the fitted second stage at additional points, reusing the
    /// stored first-stage fits. Returns point estimates and sigma values.
    pub fn evaluate_at(
        &self,
        sample: &Sample,
        points: &[Vec<f64>],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let kernel = KernelSpec::gaussian(self.h.clone())?;
        let stages = build_stages(sample, &self.method, &self.fold_fits, &self.fold_assignment)?;
        let eval = evaluate_stages(&stages, points, &kernel);
        Ok((eval.tau, eval.sigma))
    }
}

/// One second-stage regression sample: rows, conditioning coordinates, and
/// doubly-robust scores.
pub(crate) struct Stage {
    pub rows: Vec<usize>,
    pub x1: Vec<[f64; 3]>,
    pub scores: Vec<f64>,
    pub d: usize,
}

impl Stage {
    pub(crate) fn build(sample: &Sample, rows: Vec<usize>, fit: &NuisanceFit) -> Result<Stage> {
        let scores = score_vector(sample, &rows, fit)?.values;
        let d = sample.d_cond();
        let x1_cols = sample.x1_cols();
        let x1 = rows
            .iter()
            .map(|&i| {
                let mut z = [0.0_f64; 3];
                for (slot, &c) in z.iter_mut().zip(x1_cols) {
                    *slot = sample.x().get(i, c);
                }
                z
            })
            .collect();
        Ok(Stage {
            rows,
            x1,
            scores,
            d,
        })
    }

    /// Kernel weights for every (grid point, row) pair, grid-major.
    pub(crate) fn kernel_cache(&self, points: &[Vec<f64>], kernel: &KernelSpec) -> Vec<f64> {
        let n = self.rows.len();
        let mut weights = vec![0.0_f64; points.len() * n];
        for (g, pt) in points.iter().enumerate() {
            let out = &mut weights[g * n..(g + 1) * n];
            for (i, xi) in self.x1.iter().enumerate() {
                let mut z = [0.0_f64; 3];
                for j in 0..self.d {
                    z[j] = xi[j] - pt[j];
                }
                out[i] = kernel_weight(&z[..self.d], &kernel.bandwidths);
            }
        }
        weights
    }

    /// Weighted local linear fit at grid point `g` using cached kernel
    /// weights; `multipliers`, when given, is indexed by sample row.
    pub(crate) fn fit_at_cached(
        &self,
        cache: &[f64],
        g: usize,
        point: &[f64],
        multipliers: Option<&[f64]>,
    ) -> Option<LocalFit> {
        let n = self.rows.len();
        let ks = &cache[g * n..(g + 1) * n];
        let mut acc = LocalAccum::new(self.d);
        let mut z = [0.0_f64; 3];
        for i in 0..n {
            let k = ks[i];
            if k == 0.0 {
                continue;
            }
            let w = match multipliers {
                Some(xi) => xi[self.rows[i]] * k,
                None => k,
            };
            for j in 0..self.d {
                z[j] = self.x1[i][j] - point[j];
            }
            acc.add(&z[..self.d], w, self.scores[i]);
        }
        acc.solve()
    }
}

/// Rebuilds the per-fold second-stage samples for a fitted curve.
pub(crate) fn build_stages(
    sample: &Sample,
    method: &Method,
    fold_fits: &[NuisanceFit],
    fold_assignment: &Option<Vec<usize>>,
) -> Result<Vec<Stage>> {
    match method {
        Method::FullSample => {
            let rows: Vec<usize> = (0..sample.n()).collect();
            Ok(vec![Stage::build(sample, rows, &fold_fits[0])?])
        }
        Method::CrossFit { k } => {
            let assignment = fold_assignment
                .as_ref()
                .ok_or_else(|| Error::invalid("cross-fit curve lacks a fold assignment"))?;
            (0..*k)
                .map(|fold| {
                    let rows: Vec<usize> =
                        (0..sample.n()).filter(|&i| assignment[i] == fold).collect();
                    Stage::build(sample, rows, &fold_fits[fold])
                })
                .collect()
        }
    }
}

/// Point estimates, slopes, sigmas, and flags over a set of points.
pub(crate) struct StageEval {
    pub tau: Vec<f64>,
    pub slope: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub degenerate: Vec<bool>,
    /// Per-stage estimates (one inner vector per stage).
    pub stage_tau: Vec<Vec<f64>>,
}

/// Evaluates every stage at every point with unit multipliers and combines:
/// the estimate is the stage average, and the variance estimate averages the
/// per-stage variances (which reduces to the full-sample formula when there
/// is a single stage covering all rows).
pub(crate) fn evaluate_stages(
    stages: &[Stage],
    points: &[Vec<f64>],
    kernel: &KernelSpec,
) -> StageEval {
    let n_stages = stages.len();
    let n_pts = points.len();
    let d = kernel.dimension();
    let caches: Vec<Vec<f64>> = stages
        .iter()
        .map(|s| s.kernel_cache(points, kernel))
        .collect();

    let mut tau = vec![0.0_f64; n_pts];
    let mut slope = vec![vec![0.0_f64; d]; n_pts];
    let mut sigma = vec![0.0_f64; n_pts];
    let mut degenerate = vec![false; n_pts];
    let mut stage_tau = vec![vec![f64::NAN; n_pts]; n_stages];

    let hprod = kernel.bandwidth_product();

    for g in 0..n_pts {
        let mut tau_sum = 0.0;
        let mut slope_sum = vec![0.0_f64; d];
        let mut var_sum = 0.0;
        let mut bad = false;
        for (s_idx, stage) in stages.iter().enumerate() {
            let n_s = stage.rows.len();
            match stage.fit_at_cached(&caches[s_idx], g, &points[g], None) {
                Some(fit) => {
                    stage_tau[s_idx][g] = fit.intercept;
                    tau_sum += fit.intercept;
                    for (acc, b) in slope_sum.iter_mut().zip(&fit.slope) {
                        *acc += b;
                    }
                    if fit.degenerate {
                        bad = true;
                    }
                    // Stage variance: the fold (or full-sample) formula.
                    let ks = &caches[s_idx][g * n_s..(g + 1) * n_s];
                    let nh_s = n_s as f64 * hprod;
                    let density = ks.iter().sum::<f64>() / nh_s;
                    if density < DENSITY_FLOOR {
                        bad = true;
                    }
                    if density > 0.0 {
                        let mut sq = 0.0;
                        for i in 0..n_s {
                            let r = stage.scores[i] - fit.intercept;
                            sq += r * r * ks[i] * ks[i];
                        }
                        var_sum += sq / (nh_s * density * density);
                    } else {
                        var_sum = f64::NAN;
                    }
                }
                None => {
                    bad = true;
                    tau_sum = f64::NAN;
                    var_sum = f64::NAN;
                }
            }
        }
        let k_f = n_stages as f64;
        tau[g] = tau_sum / k_f;
        for (sl, acc) in slope[g].iter_mut().zip(&slope_sum) {
            *sl = acc / k_f;
        }
        sigma[g] = (var_sum / k_f).sqrt();
        degenerate[g] = bad || !tau[g].is_finite() || !sigma[g].is_finite();
    }

    StageEval {
        tau,
        slope,
        sigma,
        degenerate,
        stage_tau,
    }
}

/// Uniformly random partition of `0..n` into `k` folds whose sizes differ by
/// at most one. Returns the fold label per row.
pub fn partition_folds(n: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if n < 2 * k {
        return Err(Error::invalid("need at least 2 rows per fold"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, purpose::FOLDS, 0);
    order.shuffle(&mut rng);
    let base = n / k;
    let rem = n % k;
    let mut assignment = vec![0usize; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < rem);
        for &row in &order[pos..pos + size] {
            assignment[row] = fold;
        }
        pos += size;
    }
    Ok(assignment)
}

/// Options shared by the estimators.
#[derive(Debug, Clone, Default)]
pub struct EstimatorOptions {
    pub nuisance: NuisanceOptions,
}

/// Full-sample estimator: nuisances fit on all rows, scores regressed
/// locally at every grid point.
pub fn cate_full_sample(
    sample: &Sample,
    grid: &EvalGrid,
    h: Option<Vec<f64>>,
    options: &EstimatorOptions,
) -> Result<CateCurve> {
    grid.validate(sample.d_cond())?;
    let h = resolve_bandwidth(sample, h)?;
    let kernel = KernelSpec::gaussian(h.clone())?;
    let rows: Vec<usize> = (0..sample.n()).collect();
    let fit = fit_nuisance(sample, &rows, &options.nuisance)?;
    let stages = vec![Stage::build(sample, rows, &fit)?];
    let eval = evaluate_stages(&stages, &grid.points, &kernel);
    Ok(CateCurve {
        grid: grid.clone(),
        tau: eval.tau,
        slope: eval.slope,
        sigma: eval.sigma,
        degenerate: eval.degenerate,
        h,
        n: sample.n(),
        method: Method::FullSample,
        fold_fits: vec![fit],
        fold_assignment: None,
        fold_tau: None,
    })
}

/// K-fold cross-fitting estimator with a random partition drawn from `seed`.
pub fn cate_cross_fit(
    sample: &Sample,
    k: usize,
    grid: &EvalGrid,
    h: Option<Vec<f64>>,
    seed: u64,
    options: &EstimatorOptions,
) -> Result<CateCurve> {
    let assignment = partition_folds(sample.n(), k, seed)?;
    cate_cross_fit_with_folds(sample, &assignment, grid, h, options)
}

/// Cross-fitting estimator with a caller-supplied fold assignment.
pub fn cate_cross_fit_with_folds(
    sample: &Sample,
    fold_assignment: &[usize],
    grid: &EvalGrid,
    h: Option<Vec<f64>>,
    options: &EstimatorOptions,
) -> Result<CateCurve> {
    grid.validate(sample.d_cond())?;
    if fold_assignment.len() != sample.n() {
        return Err(Error::invalid("fold assignment length mismatch"));
    }
    let k = fold_assignment.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    let h = resolve_bandwidth(sample, h)?;
    let kernel = KernelSpec::gaussian(h.clone())?;

    let mut fold_fits = Vec::with_capacity(k);
    let mut stages = Vec::with_capacity(k);
    for fold in 0..k {
        let complement: Vec<usize> = (0..sample.n())
            .filter(|&i| fold_assignment[i] != fold)
            .collect();
        let members: Vec<usize> = (0..sample.n())
            .filter(|&i| fold_assignment[i] == fold)
            .collect();
        if members.is_empty() {
            return Err(Error::invalid(format!("fold {fold} is empty")));
        }
        let fit = fit_nuisance(sample, &complement, &options.nuisance).map_err(|e| match e {
            Error::ArmTooSmall {
                arm, count, needed, ..
            } => Error::ArmTooSmall {
                arm,
                count,
                needed,
                context: format!("complement of fold {fold}"),
            },
            other => other,
        })?;
        stages.push(Stage::build(sample, members, &fit)?);
        fold_fits.push(fit);
    }

    let eval = evaluate_stages(&stages, &grid.points, &kernel);
    Ok(CateCurve {
        grid: grid.clone(),
        tau: eval.tau,
        slope: eval.slope,
        sigma: eval.sigma,
        degenerate: eval.degenerate,
        h,
        n: sample.n(),
        method: Method::CrossFit { k },
        fold_fits,
        fold_assignment: Some(fold_assignment.to_vec()),
        fold_tau: Some(eval.stage_tau),
    })
}

fn resolve_bandwidth(sample: &Sample, h: Option<Vec<f64>>) -> Result<Vec<f64>> {
    match h {
        Some(h) => {
            if h.len() != sample.d_cond() {
                return Err(Error::invalid("bandwidth dimension mismatch"));
            }
            if h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::invalid("bandwidths must be positive"));
            }
            Ok(h)
        }
        None => crate::local::rot_bandwidth(&sample.x1_matrix()),
    }
}

/// Full-sample variance estimates over the grid, on the standard-deviation
/// scale. Errors if the kernel density vanishes at a grid point.
pub fn variance_full(
    sample: &Sample,
    fit: &NuisanceFit,
    tau: &[f64],
    grid: &EvalGrid,
    kernel: &KernelSpec,
) -> Result<Vec<f64>> {
    grid.validate(sample.d_cond())?;
    if tau.len() != grid.len() {
        return Err(Error::invalid("tau length does not match grid"));
    }
    let rows: Vec<usize> = (0..sample.n()).collect();
    let stage = Stage::build(sample, rows, fit)?;
    let cache = stage.kernel_cache(&grid.points, kernel);
    let n = stage.rows.len();
    let nh = n as f64 * kernel.bandwidth_product();
    let mut out = Vec::with_capacity(grid.len());
    for g in 0..grid.len() {
        let ks = &cache[g * n..(g + 1) * n];
        let density = ks.iter().sum::<f64>() / nh;
        if !(density > 0.0) {
            return Err(Error::numerical(format!(
                "vanishing density at grid point {g}: outside the effective support"
            )));
        }
        let mut sq = 0.0;
        for i in 0..n {
            let r = stage.scores[i] - tau[g];
            sq += r * r * ks[i] * ks[i];
        }
        out.push((sq / (nh * density * density)).sqrt());
    }
    Ok(out)
}

/// Cross-fitting variance estimates over the grid: the average over folds of
/// the per-fold variance, each centered at that fold's estimate and using
/// that fold's density.
pub fn variance_cross_fit(
    sample: &Sample,
    fold_assignment: &[usize],
    fold_fits: &[NuisanceFit],
    fold_tau: &[Vec<f64>],
    grid: &EvalGrid,
    kernel: &KernelSpec,
) -> Result<Vec<f64>> {
    grid.validate(sample.d_cond())?;
    let k = fold_fits.len();
    if fold_tau.len() != k {
        return Err(Error::invalid("fold estimates do not match fold fits"));
    }
    let mut acc = vec![0.0_f64; grid.len()];
    for fold in 0..k {
        let members: Vec<usize> = (0..sample.n())
            .filter(|&i| fold_assignment[i] == fold)
            .collect();
        let stage = Stage::build(sample, members, &fold_fits[fold])?;
        let cache = stage.kernel_cache(&grid.points, kernel);
        let n_s = stage.rows.len();
        let nh_s = n_s as f64 * kernel.bandwidth_product();
        for g in 0..grid.len() {
            let ks = &cache[g * n_s..(g + 1) * n_s];
            let density = ks.iter().sum::<f64>() / nh_s;
            if !(density > 0.0) {
                return Err(Error::numerical(format!(
                    "vanishing density at grid point {g} in fold {fold}"
                )));
            }
            let mut sq = 0.0;
            for i in 0..n_s {
                let r = stage.scores[i] - fold_tau[fold][g];
                sq += r * r * ks[i] * ks[i];
            }
            acc[g] += sq / (nh_s * density * density);
        }
    }
    Ok(acc.iter().map(|v| (v / k as f64).sqrt()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn toy_sample(n: usize, p: usize, seed: u64) -> Sample {
        let mut rng = stream_rng(seed, 94, 0);
        let data: Vec<f64> = (0..n * p)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let x = Mat::new(n, p, data).unwrap();
        let d: Vec<u8> = (0..n).map(|_| u8::from(rng.gen::<bool>())).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let noise: f64 = StandardNormal.sample(&mut rng);
                f64::from(d[i]) * (2.0 + x.get(i, 0)) + noise
            })
            .collect();
        Sample::new(y, d, x, vec![0]).unwrap()
    }

    #[test]
    fn partition_sizes_and_determinism() {
        let a = partition_folds(8, 4, 7).unwrap();
        let mut counts = [0usize; 4];
        for &f in &a {
            counts[f] += 1;
        }
        assert_eq!(counts, [2, 2, 2, 2]);

        let a = partition_folds(10, 4, 7).unwrap();
        let mut counts = vec![0usize; 4];
        for &f in &a {
            counts[f] += 1;
        }
        counts.sort_unstable();
        assert_eq!(counts, vec![2, 2, 3, 3]);

        assert_eq!(
            partition_folds(100, 5, 3).unwrap(),
            partition_folds(100, 5, 3).unwrap()
        );
        assert_ne!(
            partition_folds(100, 5, 3).unwrap(),
            partition_folds(100, 5, 4).unwrap()
        );

        assert!(partition_folds(5, 4, 0).is_err());
        assert!(partition_folds(10, 1, 0).is_err());
    }

    #[test]
    fn grid_construction() {
        let g = EvalGrid::equally_spaced(-1.0, 1.0, 201).unwrap();
        assert_eq!(g.len(), 201);
        assert_eq!(g.points[0], vec![-1.0]);
        assert_eq!(g.points[200], vec![1.0]);
        assert!((g.points[100][0]).abs() < 1e-12);

        let s = toy_sample(400, 3, 1);
        let g = EvalGrid::from_sample_percentiles(&s, 201).unwrap();
        assert_eq!(g.len(), 201);
        let col = s.x1_matrix().col_copy(0);
        let inside = col
            .iter()
            .filter(|&&v| v >= g.bounds[0].0 && v <= g.bounds[0].1)
            .count();
        // Roughly the central 96% of the data lies inside the default bounds.
        assert!((inside as f64 / 400.0 - 0.96).abs() < 0.02);
    }

    #[test]
    fn zero_outcome_gives_zero_curve() {
        let mut s = toy_sample(80, 4, 2);
        s = Sample::new(
            vec![0.0; 80],
            s.d().to_vec(),
            s.x().clone(),
            s.x1_cols().to_vec(),
        )
        .unwrap();
        let grid = EvalGrid::equally_spaced(-0.8, 0.8, 11).unwrap();
        let curve = cate_full_sample(&s, &grid, None, &EstimatorOptions::default()).unwrap();
        for (g, t) in curve.tau.iter().enumerate() {
            assert_eq!(*t, 0.0, "grid point {g}");
            assert_eq!(curve.sigma[g], 0.0);
        }
    }

    #[test]
    fn fold_mean_identity() {
        let s = toy_sample(120, 4, 3);
        let grid = EvalGrid::equally_spaced(-0.9, 0.9, 15).unwrap();
        let curve = cate_cross_fit(&s, 4, &grid, None, 11, &EstimatorOptions::default()).unwrap();
        let fold_tau = curve.fold_tau.as_ref().unwrap();
        for g in 0..grid.len() {
            let mean: f64 = fold_tau.iter().map(|f| f[g]).sum::<f64>() / 4.0;
            assert!((curve.tau[g] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_folds_are_symmetric() {
        let s = toy_sample(60, 3, 4);
        // Duplicate the sample and assign one copy per fold.
        let mut y = s.y().to_vec();
        y.extend_from_slice(s.y());
        let mut d = s.d().to_vec();
        d.extend_from_slice(s.d());
        let mut rows: Vec<Vec<f64>> = (0..60).map(|i| s.x().row(i).to_vec()).collect();
        rows.extend((0..60).map(|i| s.x().row(i).to_vec()));
        let dup = Sample::new(y, d, Mat::from_rows(&rows).unwrap(), vec![0]).unwrap();
        let assignment: Vec<usize> = (0..120).map(|i| usize::from(i >= 60)).collect();
        let grid = EvalGrid::equally_spaced(-0.7, 0.7, 9).unwrap();
        let curve = cate_cross_fit_with_folds(
            &dup,
            &assignment,
            &grid,
            Some(vec![0.4]),
            &EstimatorOptions::default(),
        )
        .unwrap();
        let fold_tau = curve.fold_tau.as_ref().unwrap();
        for g in 0..grid.len() {
            assert_eq!(fold_tau[0][g].to_bits(), fold_tau[1][g].to_bits());
            assert!((curve.tau[g] - fold_tau[0][g]).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicating_observations_keeps_tau_and_sigma_but_halves_se_squared() {
        // Holding the scores fixed (the nuisance fits do not change),
        // duplicating every second-stage observation leaves both tau and the
        // normalized sigma untouched; the squared standard error
        // sigma^2/(n h) halves because n doubles.
        let mut rng = stream_rng(5, 94, 3);
        let n = 70;
        let x1: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                [v, 0.0, 0.0]
            })
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let kernel = KernelSpec::gaussian(vec![0.5]).unwrap();
        let points: Vec<Vec<f64>> = vec![vec![-0.3], vec![0.0], vec![0.6]];

        let stage = Stage {
            rows: (0..n).collect(),
            x1: x1.clone(),
            scores: scores.clone(),
            d: 1,
        };
        let base = evaluate_stages(&[stage], &points, &kernel);

        let mut x1_dup = x1.clone();
        x1_dup.extend_from_slice(&x1);
        let mut scores_dup = scores.clone();
        scores_dup.extend_from_slice(&scores);
        let doubled_stage = Stage {
            rows: (0..2 * n).collect(),
            x1: x1_dup,
            scores: scores_dup,
            d: 1,
        };
        let doubled = evaluate_stages(&[doubled_stage], &points, &kernel);

        let hprod = 0.5;
        for g in 0..points.len() {
            assert!((base.tau[g] - doubled.tau[g]).abs() < 1e-10);
            assert!((base.sigma[g] - doubled.sigma[g]).abs() < 1e-10);
            let se2_base = base.sigma[g].powi(2) / (n as f64 * hprod);
            let se2_doubled = doubled.sigma[g].powi(2) / (2.0 * n as f64 * hprod);
            assert!((se2_doubled - se2_base / 2.0).abs() < 1e-10 * se2_base.max(1e-30));
        }
    }

    #[test]
    fn variance_full_matches_direct_recomputation() {
        let s = toy_sample(20, 3, 6);
        let grid = EvalGrid::equally_spaced(-0.5, 0.5, 5).unwrap();
        let h = vec![0.45];
        let kernel = KernelSpec::gaussian(h.clone()).unwrap();
        let opts = EstimatorOptions::default();
        let curve = cate_full_sample(&s, &grid, Some(h.clone()), &opts).unwrap();
        let sigma = variance_full(&s, &curve.fold_fits[0], &curve.tau, &grid, &kernel).unwrap();

        // Direct recomputation from scratch.
        let rows: Vec<usize> = (0..20).collect();
        let scores = crate::score::score_vector(&s, &rows, &curve.fold_fits[0])
            .unwrap()
            .values;
        let x1 = s.x1_matrix();
        for (g, pt) in grid.points.iter().enumerate() {
            let mut ksum = 0.0;
            let mut sq = 0.0;
            for i in 0..20 {
                let z: f64 = (x1.get(i, 0) - pt[0]) / h[0];
                let kw = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                ksum += kw;
                let r = scores[i] - curve.tau[g];
                sq += r * r * kw * kw;
            }
            let nh = 20.0 * h[0];
            let fhat = ksum / nh;
            let expect = (sq / (nh * fhat * fhat)).sqrt();
            assert!((sigma[g] - expect).abs() < 1e-10, "grid {g}");
            assert!((curve.sigma[g] - expect).abs() < 1e-10, "curve sigma {g}");
        }
    }

    #[test]
    fn variance_cross_fit_matches_direct_recomputation() {
        let s = toy_sample(40, 3, 7);
        let grid = EvalGrid::equally_spaced(-0.4, 0.4, 3).unwrap();
        let h = vec![0.5];
        let kernel = KernelSpec::gaussian(h.clone()).unwrap();
        let curve = cate_cross_fit(
            &s,
            2,
            &grid,
            Some(h.clone()),
            5,
            &EstimatorOptions::default(),
        )
        .unwrap();
        let assignment = curve.fold_assignment.as_ref().unwrap();
        let fold_tau = curve.fold_tau.as_ref().unwrap();
        let sigma =
            variance_cross_fit(&s, assignment, &curve.fold_fits, fold_tau, &grid, &kernel).unwrap();

        let x1 = s.x1_matrix();
        for (g, pt) in grid.points.iter().enumerate() {
            let mut var_acc = 0.0;
            for fold in 0..2 {
                let members: Vec<usize> = (0..40).filter(|&i| assignment[i] == fold).collect();
                let scores = crate::score::score_vector(&s, &members, &curve.fold_fits[fold])
                    .unwrap()
                    .values;
                let n_s = members.len() as f64;
                let mut ksum = 0.0;
                let mut sq = 0.0;
                for (pos, &i) in members.iter().enumerate() {
                    let z: f64 = (x1.get(i, 0) - pt[0]) / h[0];
                    let kw = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                    ksum += kw;
                    let r = scores[pos] - fold_tau[fold][g];
                    sq += r * r * kw * kw;
                }
                let nh_s = n_s * h[0];
                let fhat = ksum / nh_s;
                var_acc += sq / (nh_s * fhat * fhat);
            }
            let expect = (var_acc / 2.0).sqrt();
            assert!((sigma[g] - expect).abs() < 1e-10, "grid {g}");
            assert!((curve.sigma[g] - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn shifting_scores_shifts_tau_and_preserves_sigma() {
        // Inject shifted score vectors into the second stage directly.
        let mut rng = stream_rng(8, 94, 1);
        let n = 50;
        let rows: Vec<usize> = (0..n).collect();
        let x1: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                [v, 0.0, 0.0]
            })
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let kernel = KernelSpec::gaussian(vec![0.5]).unwrap();
        let points = vec![vec![0.0], vec![0.4]];

        let stage = Stage {
            rows: rows.clone(),
            x1: x1.clone(),
            scores: scores.clone(),
            d: 1,
        };
        let base = evaluate_stages(&[stage], &points, &kernel);

        let c = 3.7;
        let shifted_stage = Stage {
            rows,
            x1,
            scores: scores.iter().map(|s| s + c).collect(),
            d: 1,
        };
        let shifted = evaluate_stages(&[shifted_stage], &points, &kernel);

        for g in 0..points.len() {
            assert!((shifted.tau[g] - base.tau[g] - c).abs() < 1e-10);
            assert!((shifted.sigma[g] - base.sigma[g]).abs() < 1e-10);
        }
    }

    #[test]
    fn curves_are_deterministic() {
        let s = toy_sample(90, 4, 9);
        let grid = EvalGrid::equally_spaced(-0.5, 0.5, 5).unwrap();
        let a = cate_cross_fit(&s, 3, &grid, None, 21, &EstimatorOptions::default()).unwrap();
        let b = cate_cross_fit(&s, 3, &grid, None, 21, &EstimatorOptions::default()).unwrap();
        for g in 0..grid.len() {
            assert_eq!(a.tau[g].to_bits(), b.tau[g].to_bits());
            assert_eq!(a.sigma[g].to_bits(), b.sigma[g].to_bits());
        }
    }

    #[test]
    fn evaluate_at_matches_grid_evaluation() {
        let s = toy_sample(80, 3, 10);
        let grid = EvalGrid::equally_spaced(-0.5, 0.5, 5).unwrap();
        let curve = cate_cross_fit(&s, 2, &grid, None, 2, &EstimatorOptions::default()).unwrap();
        let (tau, sigma) = curve.evaluate_at(&s, &grid.points).unwrap();
        for g in 0..grid.len() {
            assert!((tau[g] - curve.tau[g]).abs() < 1e-12);
            assert!((sigma[g] - curve.sigma[g]).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_arm_in_fold_complement_is_reported_with_fold() {
        // All treated units concentrated so one complement lacks them.
        let n = 24;
        let mut rng = stream_rng(11, 94, 2);
        let data: Vec<f64> = (0..n * 2)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let x = Mat::new(n, 2, data).unwrap();
        let d: Vec<u8> = (0..n).map(|i| u8::from(i < 4)).collect();
        let y = vec![1.0; n];
        let s = Sample::new(y, d, x, vec![0]).unwrap();
        // Fold 0 = rows 0..12 (all treated in fold 0's members; its
        // complement rows 12..24 are all controls).
        let assignment: Vec<usize> = (0..n).map(|i| usize::from(i >= 12)).collect();
        let grid = EvalGrid::equally_spaced(-0.3, 0.3, 3).unwrap();
        let err = cate_cross_fit_with_folds(
            &s,
            &assignment,
            &grid,
            Some(vec![0.5]),
            &EstimatorOptions::default(),
        )
        .unwrap_err();
        match err {
            Error::ArmTooSmall { context, .. } => {
                assert!(context.contains("fold 0"), "context: {context}")
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}

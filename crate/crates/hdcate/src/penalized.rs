//! L1-penalized linear and logistic regression with a plug-in penalty level,
//! plus unpenalized refitting on the selected support.
//!
//! The linear solver minimizes
//! `0.5 * sum_i (y_i - a - x_i'b)^2 + lambda * sum_j scale_j * |b_j|`
//! with an unpenalized intercept, via cyclic coordinate descent with
//! soft-thresholding on standardized columns. The logistic solver minimizes
//! `-(1/n) loglik + (lambda/n) * sum_j scale_j * |theta_j|` via coordinate
//! descent nested in iteratively reweighted least squares.

use crate::error::{Error, Result};
use crate::mat::{mean, Mat};
use crate::norm::{logistic_cdf, norm_quantile, softplus};

/// Convergence tolerance on the maximum coefficient change per sweep,
/// on the standardized scale.
pub const CD_TOL: f64 = 1e-7;
/// Total sweep budget across the whole solve.
pub const MAX_SWEEPS: usize = 10_000;
/// Linear predictors are clamped to this magnitude when evaluating the
/// logistic c.d.f.; hitting the clamp raises the separation flag.
pub const LOGIT_CLAMP: f64 = 30.0;

const PROB_FLOOR: f64 = 1e-5;
const MAX_OUTER: usize = 200;
const PIVOT_REL_TOL: f64 = 1e-10;

/// Regression family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Linear,
    Logistic,
}

/// Which nuisance function the penalty is tuned for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyRole {
    /// Conditional mean regression: `2c sqrt(n) * Phi^-1(1 - 0.1/(log(n) 2p))`.
    Outcome,
    /// Propensity score: `c sqrt(n) * Phi^-1(1 - 0.1/(log(n) 4p))`.
    Propensity,
}

/// Plug-in penalty level for a given sample size, dictionary size, and role.
///
/// Strictly positive and strictly increasing in both `n` and `p`. The scale
/// constant `c` is conventionally 1.1.
pub fn plugin_penalty_level(n: usize, p: usize, role: PenaltyRole, c: f64) -> Result<f64> {
    if n < 3 {
        return Err(Error::invalid("penalty level needs n >= 3"));
    }
    if p < 1 {
        return Err(Error::invalid("penalty level needs p >= 1"));
    }
    if !(c > 0.0) {
        return Err(Error::invalid("penalty scale constant must be positive"));
    }
    let n_f = n as f64;
    let denom = match role {
        PenaltyRole::Outcome => n_f.ln() * 2.0 * p as f64,
        PenaltyRole::Propensity => n_f.ln() * 4.0 * p as f64,
    };
    let tail = 0.1 / denom;
    if !(tail < 0.5) {
        return Err(Error::Domain(format!(
            "quantile argument 1 - {tail} outside (0.5, 1)"
        )));
    }
    let q = norm_quantile(1.0 - tail)?;
    let lam = match role {
        PenaltyRole::Outcome => 2.0 * c * n_f.sqrt() * q,
        PenaltyRole::Propensity => c * n_f.sqrt() * q,
    };
    Ok(lam)
}

/// Design matrix for penalized regression: the raw dictionary together with
/// per-column centering/scaling statistics used as penalty loadings.
///
/// Columns with (numerically) zero variance are flagged inactive; they keep a
/// zero coefficient and are excluded from penalization and KKT checks.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    values: Mat,
    column_means: Vec<f64>,
    column_scales: Vec<f64>,
    active: Vec<bool>,
}

impl DesignMatrix {
    pub fn new(values: Mat) -> Result<Self> {
        let (n, p) = (values.nrows(), values.ncols());
        if n < 2 {
            return Err(Error::invalid("design matrix needs at least 2 rows"));
        }
        if p < 1 {
            return Err(Error::invalid("design matrix needs at least 1 column"));
        }
        let mut column_means = Vec::with_capacity(p);
        let mut column_scales = Vec::with_capacity(p);
        let mut active = Vec::with_capacity(p);
        for j in 0..p {
            let col = values.col_copy(j);
            let m = mean(&col);
            let sd = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt();
            let is_active = sd > 1e-12 * (1.0 + m.abs());
            column_means.push(m);
            column_scales.push(sd);
            active.push(is_active);
        }
        Ok(DesignMatrix {
            values,
            column_means,
            column_scales,
            active,
        })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn column_scales(&self) -> &[f64] {
        &self.column_scales
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.active[j]
    }

    /// Standardized column `j`, transposed into a contiguous vector.
    fn std_col(&self, j: usize) -> Vec<f64> {
        let n = self.nrows();
        let (m, s) = (self.column_means[j], self.column_scales[j]);
        (0..n).map(|i| (self.values.get(i, j) - m) / s).collect()
    }

    /// All active standardized columns, keyed by column index.
    fn std_cols(&self, columns: &[usize]) -> Vec<(usize, Vec<f64>)> {
        columns
            .iter()
            .filter(|&&j| self.active[j])
            .map(|&j| (j, self.std_col(j)))
            .collect()
    }
}

/// A fitted (possibly refitted) penalized regression.
#[derive(Debug, Clone)]
pub struct LassoFit {
    pub intercept: f64,
    /// Coefficients on the original, unstandardized scale.
    pub coefficients: Vec<f64>,
    /// Sorted indices of the nonzero coefficients.
    pub support: Vec<usize>,
    /// Penalty level used (0 for unpenalized refits).
    pub lambda: f64,
    pub family: Family,
    /// Coordinate-descent sweeps (linear) or total inner sweeps (logistic).
    pub iterations: usize,
    pub converged: bool,
    /// Set when the logistic linear predictor hit the +-30 clamp.
    pub separation: bool,
    /// Columns dropped from a refit because the submatrix was rank deficient.
    pub dropped: Vec<usize>,
}

impl LassoFit {
    /// Linear predictor `intercept + x'coefficients`, summing over the support.
    pub fn linear_predictor(&self, x_row: &[f64]) -> f64 {
        let mut eta = self.intercept;
        for &j in &self.support {
            eta += x_row[j] * self.coefficients[j];
        }
        eta
    }
}

#[inline]
fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

fn logit(p: f64) -> f64 {
    if p <= 0.0 {
        -LOGIT_CLAMP
    } else if p >= 1.0 {
        LOGIT_CLAMP
    } else {
        (p / (1.0 - p)).ln()
    }
}

#[allow(clippy::too_many_arguments)]
fn finish_fit(
    design: &DesignMatrix,
    std_coef: &[(usize, f64)],
    intercept_centered: f64,
    lambda: f64,
    family: Family,
    iterations: usize,
    converged: bool,
    separation: bool,
    dropped: Vec<usize>,
) -> LassoFit {
    // Map standardized coefficients back to the original scale. The model was
    // fit on centered columns, so the intercept absorbs the means.
    let p = design.ncols();
    let mut coefficients = vec![0.0; p];
    let mut intercept = intercept_centered;
    for &(j, bj) in std_coef {
        if bj != 0.0 {
            let orig = bj / design.column_scales[j];
            coefficients[j] = orig;
            intercept -= design.column_means[j] * orig;
        }
    }
    let support: Vec<usize> = (0..p).filter(|&j| coefficients[j] != 0.0).collect();
    LassoFit {
        intercept,
        coefficients,
        support,
        lambda,
        family,
        iterations,
        converged,
        separation,
        dropped,
    }
}

/// Lasso linear regression. See the module docs for the exact objective.
pub fn lasso_linear(design: &DesignMatrix, response: &[f64], lambda: f64) -> Result<LassoFit> {
    lasso_linear_impl(design, response, lambda, None)
}

pub(crate) fn lasso_linear_impl(
    design: &DesignMatrix,
    response: &[f64],
    lambda: f64,
    mut objective_trace: Option<&mut Vec<f64>>,
) -> Result<LassoFit> {
    let n = design.nrows();
    if response.len() != n {
        return Err(Error::invalid("response length does not match design rows"));
    }
    if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("response contains non-finite values"));
    }
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be nonnegative"));
    }

    let all: Vec<usize> = (0..design.ncols()).collect();
    let cols = design.std_cols(&all);
    let y_bar = mean(response);
    let mut resid: Vec<f64> = response.iter().map(|y| y - y_bar).collect();
    let quad: Vec<f64> = cols
        .iter()
        .map(|(_, xj)| xj.iter().map(|v| v * v).sum::<f64>())
        .collect();
    let mut coef = vec![0.0_f64; cols.len()];

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut max_change = 0.0_f64;
        for (idx, (_, xj)) in cols.iter().enumerate() {
            let g: f64 = xj.iter().zip(&resid).map(|(x, r)| x * r).sum();
            let z = g + quad[idx] * coef[idx];
            let new = soft_threshold(z, lambda) / quad[idx];
            let delta = new - coef[idx];
            if delta != 0.0 {
                for (r, x) in resid.iter_mut().zip(xj) {
                    *r -= delta * x;
                }
                coef[idx] = new;
            }
            max_change = max_change.max(delta.abs());
        }
        if let Some(trace) = objective_trace.as_deref_mut() {
            let rss: f64 = resid.iter().map(|r| r * r).sum();
            let pen: f64 = coef.iter().map(|b| b.abs()).sum();
            trace.push(0.5 * rss + lambda * pen);
        }
        if max_change < CD_TOL {
            converged = true;
            break;
        }
    }

    let std_coef: Vec<(usize, f64)> = cols
        .iter()
        .map(|(j, _)| *j)
        .zip(coef.iter().copied())
        .collect();
    Ok(finish_fit(
        design,
        &std_coef,
        y_bar,
        lambda,
        Family::Linear,
        sweeps,
        converged,
        false,
        Vec::new(),
    ))
}

/// Lasso logistic regression fit by coordinate descent on successive
/// weighted-least-squares approximations.
pub fn lasso_logistic(design: &DesignMatrix, labels: &[f64], lambda: f64) -> Result<LassoFit> {
    lasso_logistic_impl(design, labels, lambda, None)
}

pub(crate) fn lasso_logistic_impl(
    design: &DesignMatrix,
    labels: &[f64],
    lambda: f64,
    mut objective_trace: Option<&mut Vec<f64>>,
) -> Result<LassoFit> {
    let n = design.nrows();
    validate_labels(labels, n)?;
    if !(lambda >= 0.0) {
        return Err(Error::invalid("lambda must be nonnegative"));
    }

    let all: Vec<usize> = (0..design.ncols()).collect();
    let cols = design.std_cols(&all);
    let n_f = n as f64;
    let lam_n = lambda / n_f;
    let d_bar = mean(labels);

    let mut intercept = logit(d_bar);
    let mut coef = vec![0.0_f64; cols.len()];
    let mut eta = vec![intercept; n];

    let mut total_sweeps = 0;
    let mut converged = false;
    let mut separation = false;

    if let Some(trace) = objective_trace.as_deref_mut() {
        trace.push(logistic_objective(labels, &eta, lam_n, &coef));
    }

    for _outer in 0..MAX_OUTER {
        // Quadratic approximation at the current linear predictor.
        let mut weights = vec![0.0_f64; n];
        let mut work = vec![0.0_f64; n]; // working residual z - eta
        for i in 0..n {
            let e = eta[i];
            if e.abs() > LOGIT_CLAMP {
                separation = true;
            }
            let pr = logistic_cdf(e.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
                .clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
            weights[i] = pr * (1.0 - pr);
            work[i] = (labels[i] - pr) / weights[i];
        }

        let quad: Vec<f64> = cols
            .iter()
            .map(|(_, xj)| xj.iter().zip(&weights).map(|(x, w)| w * x * x).sum::<f64>() / n_f)
            .collect();
        let w_sum: f64 = weights.iter().sum();

        let before_coef = coef.clone();
        let before_intercept = intercept;

        // Inner coordinate descent on the weighted quadratic.
        loop {
            total_sweeps += 1;
            let mut max_change = 0.0_f64;

            let num: f64 = weights.iter().zip(&work).map(|(w, r)| w * r).sum();
            let dint = num / w_sum;
            if dint != 0.0 {
                intercept += dint;
                for r in work.iter_mut() {
                    *r -= dint;
                }
            }
            max_change = max_change.max(dint.abs());

            for (idx, (_, xj)) in cols.iter().enumerate() {
                let g: f64 = xj
                    .iter()
                    .zip(&weights)
                    .zip(&work)
                    .map(|((x, w), r)| w * x * r)
                    .sum::<f64>()
                    / n_f;
                let z = g + quad[idx] * coef[idx];
                let new = soft_threshold(z, lam_n) / quad[idx];
                let delta = new - coef[idx];
                if delta != 0.0 {
                    for (r, x) in work.iter_mut().zip(xj) {
                        *r -= delta * x;
                    }
                    coef[idx] = new;
                }
                max_change = max_change.max(delta.abs());
            }

            if max_change < CD_TOL || total_sweeps >= MAX_SWEEPS {
                break;
            }
        }

        // Refresh the linear predictor from scratch.
        for e in eta.iter_mut() {
            *e = intercept;
        }
        for (idx, (_, xj)) in cols.iter().enumerate() {
            let b = coef[idx];
            if b != 0.0 {
                for (e, x) in eta.iter_mut().zip(xj) {
                    *e += b * x;
                }
            }
        }

        if let Some(trace) = objective_trace.as_deref_mut() {
            trace.push(logistic_objective(labels, &eta, lam_n, &coef));
        }

        let outer_change = coef
            .iter()
            .zip(&before_coef)
            .map(|(a, b)| (a - b).abs())
            .fold((intercept - before_intercept).abs(), f64::max);
        if outer_change < CD_TOL {
            converged = true;
            break;
        }
        if total_sweeps >= MAX_SWEEPS {
            break;
        }
    }

    let std_coef: Vec<(usize, f64)> = cols
        .iter()
        .map(|(j, _)| *j)
        .zip(coef.iter().copied())
        .collect();
    Ok(finish_fit(
        design,
        &std_coef,
        intercept,
        lambda,
        Family::Logistic,
        total_sweeps,
        converged,
        separation,
        Vec::new(),
    ))
}

fn validate_labels(labels: &[f64], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::invalid("labels length does not match design rows"));
    }
    if labels.iter().any(|&d| d != 0.0 && d != 1.0) {
        return Err(Error::invalid("labels must be 0 or 1"));
    }
    let ones = labels.iter().filter(|&&d| d == 1.0).count();
    if ones == 0 || ones == labels.len() {
        return Err(Error::invalid("labels must contain both classes"));
    }
    Ok(())
}

/// Penalized negative average log-likelihood, on the standardized scale.
fn logistic_objective(labels: &[f64], eta: &[f64], lam_n: f64, std_coef: &[f64]) -> f64 {
    let n_f = labels.len() as f64;
    let nll: f64 = labels
        .iter()
        .zip(eta)
        .map(|(&d, &e)| softplus(e) - d * e)
        .sum::<f64>()
        / n_f;
    nll + lam_n * std_coef.iter().map(|b| b.abs()).sum::<f64>()
}

/// Largest penalty-free correlation: the smallest `lambda` at which the lasso
/// solution is the null model. For the linear family the working residual is
/// `y - mean(y)`; for the logistic family it is `d - mean(d)`.
pub fn null_threshold(design: &DesignMatrix, response: &[f64], family: Family) -> Result<f64> {
    let n = design.nrows();
    if response.len() != n {
        return Err(Error::invalid("response length does not match design rows"));
    }
    let r_bar = mean(response);
    let resid: Vec<f64> = response.iter().map(|v| v - r_bar).collect();
    let all: Vec<usize> = (0..design.ncols()).collect();
    let mut best = 0.0_f64;
    for (_, xj) in design.std_cols(&all) {
        let g: f64 = xj.iter().zip(&resid).map(|(x, r)| x * r).sum();
        best = best.max(g.abs());
    }
    // Same expression for both families at the null fit.
    let _ = family;
    Ok(best)
}

/// Maximum KKT stationarity violation of a fit, on the standardized scale.
///
/// For columns off the support the violation is `max(0, |g_j| - lambda/n)`;
/// on the support it is `|g_j - (lambda/n) sign(b_j)|`, where
/// `g_j = n^-1 sum_i xstd_ij r_i` and `r` is the working residual. Only
/// meaningful for fits produced by the penalized solvers (refits satisfy
/// stationarity on their support alone).
pub fn kkt_violation(design: &DesignMatrix, response: &[f64], fit: &LassoFit) -> Result<f64> {
    let n = design.nrows();
    if response.len() != n {
        return Err(Error::invalid("response length does not match design rows"));
    }
    let resid: Vec<f64> = (0..n)
        .map(|i| {
            let eta = fit.linear_predictor(design.values().row(i));
            match fit.family {
                Family::Linear => response[i] - eta,
                Family::Logistic => {
                    response[i] - logistic_cdf(eta.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
                }
            }
        })
        .collect();
    let lam_n = fit.lambda / n as f64;
    let n_f = n as f64;
    let mut worst = 0.0_f64;
    for j in 0..design.ncols() {
        if !design.is_active(j) {
            continue;
        }
        let xj = design.std_col(j);
        let g: f64 = xj.iter().zip(&resid).map(|(x, r)| x * r).sum::<f64>() / n_f;
        let b = fit.coefficients[j];
        let v = if b == 0.0 {
            (g.abs() - lam_n).max(0.0)
        } else {
            (g - lam_n * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    Ok(worst)
}

/// Unpenalized refit restricted to the given support.
///
/// Coefficients outside the support are exactly zero. A rank-deficient
/// submatrix is handled by dropping columns (smallest pivots first) and
/// recording them in `dropped`.
pub fn post_lasso_refit(
    design: &DesignMatrix,
    response: &[f64],
    support: &[usize],
    family: Family,
) -> Result<LassoFit> {
    let n = design.nrows();
    if response.len() != n {
        return Err(Error::invalid("response length does not match design rows"));
    }
    if support.len() >= n {
        return Err(Error::invalid("support size must be below the sample size"));
    }
    let mut seen = vec![false; design.ncols()];
    for &j in support {
        if j >= design.ncols() {
            return Err(Error::invalid(format!("support index {j} out of range")));
        }
        if seen[j] {
            return Err(Error::invalid(format!("duplicate support index {j}")));
        }
        seen[j] = true;
    }
    if family == Family::Logistic {
        validate_labels(response, n)?;
    } else if response.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("response contains non-finite values"));
    }

    // Inactive (constant) columns cannot be refit; drop them up front.
    let mut dropped: Vec<usize> = support
        .iter()
        .copied()
        .filter(|&j| !design.is_active(j))
        .collect();
    let mut keep: Vec<usize> = support
        .iter()
        .copied()
        .filter(|&j| design.is_active(j))
        .collect();
    keep.sort_unstable();

    let cols = design.std_cols(&keep);
    let k = cols.len();

    // Rank screen on the Gram matrix of centered/standardized columns.
    if k > 0 {
        let mut gram = vec![0.0_f64; k * k];
        for a in 0..k {
            for b in a..k {
                let g: f64 = cols[a].1.iter().zip(&cols[b].1).map(|(x, y)| x * y).sum();
                gram[a * k + b] = g;
                gram[b * k + a] = g;
            }
        }
        let max_diag = (0..k).map(|a| gram[a * k + a]).fold(0.0_f64, f64::max);
        let kept_mask = pivoted_cholesky_keep(&gram, k, PIVOT_REL_TOL * max_diag);
        for (idx, &keep_it) in kept_mask.iter().enumerate() {
            if !keep_it {
                dropped.push(cols[idx].0);
            }
        }
        if kept_mask.iter().any(|&m| !m) {
            keep = cols
                .iter()
                .zip(&kept_mask)
                .filter(|(_, &m)| m)
                .map(|((j, _), _)| *j)
                .collect();
        }
    }
    dropped.sort_unstable();

    let cols = design.std_cols(&keep);
    let k = cols.len();

    let (std_coef, intercept_centered, iterations, converged, separation) = match family {
        Family::Linear => {
            let y_bar = mean(response);
            let yc: Vec<f64> = response.iter().map(|y| y - y_bar).collect();
            let mut gram = vec![0.0_f64; k * k];
            let mut rhs = vec![0.0_f64; k];
            for a in 0..k {
                for b in a..k {
                    let g: f64 = cols[a].1.iter().zip(&cols[b].1).map(|(x, y)| x * y).sum();
                    gram[a * k + b] = g;
                    gram[b * k + a] = g;
                }
                rhs[a] = cols[a].1.iter().zip(&yc).map(|(x, y)| x * y).sum();
            }
            let sol = solve_spd(&mut gram, &mut rhs, k)?;
            let std_coef: Vec<(usize, f64)> = cols
                .iter()
                .map(|(j, _)| *j)
                .zip(sol.iter().copied())
                .collect();
            (std_coef, y_bar, 1, true, false)
        }
        Family::Logistic => {
            let d_bar = mean(response);
            let mut intercept = logit(d_bar);
            let mut beta = vec![0.0_f64; k];
            let mut iterations = 0;
            let mut converged = false;
            let mut separation = false;
            let dim = k + 1;
            for _ in 0..100 {
                iterations += 1;
                let mut eta = vec![intercept; n];
                for (idx, (_, xj)) in cols.iter().enumerate() {
                    let b = beta[idx];
                    if b != 0.0 {
                        for (e, x) in eta.iter_mut().zip(xj) {
                            *e += b * x;
                        }
                    }
                }
                let mut w = vec![0.0_f64; n];
                let mut u = vec![0.0_f64; n];
                for i in 0..n {
                    if eta[i].abs() > LOGIT_CLAMP {
                        separation = true;
                    }
                    let pr = logistic_cdf(eta[i].clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
                        .clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
                    w[i] = pr * (1.0 - pr);
                    u[i] = response[i] - pr;
                }
                // Newton step on (intercept, beta): solve (X'WX) d = X'u.
                let mut a_mat = vec![0.0_f64; dim * dim];
                let mut rhs = vec![0.0_f64; dim];
                a_mat[0] = w.iter().sum();
                rhs[0] = u.iter().sum();
                for (idx, (_, xj)) in cols.iter().enumerate() {
                    let aw: f64 = xj.iter().zip(&w).map(|(x, wi)| x * wi).sum();
                    a_mat[idx + 1] = aw;
                    a_mat[(idx + 1) * dim] = aw;
                    rhs[idx + 1] = xj.iter().zip(&u).map(|(x, ui)| x * ui).sum();
                    for idx2 in idx..k {
                        let g: f64 = xj
                            .iter()
                            .zip(&cols[idx2].1)
                            .zip(&w)
                            .map(|((x, y), wi)| wi * x * y)
                            .sum();
                        a_mat[(idx + 1) * dim + idx2 + 1] = g;
                        a_mat[(idx2 + 1) * dim + idx + 1] = g;
                    }
                }
                let step = solve_spd(&mut a_mat, &mut rhs, dim)?;
                intercept += step[0];
                for (b, s) in beta.iter_mut().zip(&step[1..]) {
                    *b += s;
                }
                let max_step = step.iter().map(|s| s.abs()).fold(0.0, f64::max);
                if max_step < 1e-10 {
                    converged = true;
                    break;
                }
            }
            let std_coef: Vec<(usize, f64)> = cols
                .iter()
                .map(|(j, _)| *j)
                .zip(beta.iter().copied())
                .collect();
            (std_coef, intercept, iterations, converged, separation)
        }
    };

    Ok(finish_fit(
        design,
        &std_coef,
        intercept_centered,
        0.0,
        family,
        iterations,
        converged,
        separation,
        dropped,
    ))
}

/// Pivoted Cholesky rank screen: returns a keep-mask over the `k` columns of
/// the symmetric matrix `gram`, stopping once the largest remaining pivot
/// falls below `tol`.
fn pivoted_cholesky_keep(gram: &[f64], k: usize, tol: f64) -> Vec<bool> {
    let mut g = gram.to_vec();
    let mut kept = vec![false; k];
    let mut order: Vec<usize> = (0..k).collect();
    // Work on a permuted copy; `order[..step]` holds processed columns.
    for step in 0..k {
        let (mut best, mut best_val) = (step, f64::NEG_INFINITY);
        for (pos, &c) in order.iter().enumerate().skip(step) {
            let v = g[c * k + c];
            if v > best_val {
                best_val = v;
                best = pos;
            }
        }
        if best_val < tol {
            break;
        }
        order.swap(step, best);
        let pc = order[step];
        kept[pc] = true;
        let pivot = g[pc * k + pc];
        // Schur-complement update of the remaining diagonal/off-diagonals.
        for &r in order.iter().skip(step + 1) {
            let grc = g[r * k + pc];
            for &c in order.iter().skip(step + 1) {
                g[r * k + c] -= grc * g[c * k + pc] / pivot;
            }
        }
    }
    kept
}

/// Symmetric positive-definite solve by Cholesky (in place).
fn solve_spd(a: &mut [f64], b: &mut [f64], dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        return Ok(Vec::new());
    }
    // Cholesky factorization a = L L'.
    for i in 0..dim {
        for j in 0..=i {
            let mut s = a[i * dim + j];
            for t in 0..j {
                s -= a[i * dim + t] * a[j * dim + t];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::numerical(
                        "Cholesky pivot not positive; matrix is singular",
                    ));
                }
                a[i * dim + i] = s.sqrt();
            } else {
                a[i * dim + j] = s / a[j * dim + j];
            }
        }
    }
    // Forward/backward substitution.
    let mut x = vec![0.0_f64; dim];
    for i in 0..dim {
        let mut s = b[i];
        for t in 0..i {
            s -= a[i * dim + t] * x[t];
        }
        x[i] = s / a[i * dim + i];
    }
    for i in (0..dim).rev() {
        let mut s = x[i];
        for t in i + 1..dim {
            s -= a[t * dim + i] * x[t];
        }
        x[i] = s / a[i * dim + i];
    }
    Ok(x)
}

//! Synthetic data generators for the two Monte Carlo designs, with
//! closed-form true CATE functions for evaluation.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::norm::logistic_cdf;
use crate::nuisance::Sample;
use crate::rng::{purpose, stream_rng};

/// Which design to generate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Four unit coefficients, the rest exactly zero; independent standard
    /// normal covariates.
    StrictSparse,
    /// All coefficients proportional to `1/k^2`; autoregressive covariates.
    ApproxSparse { r2: f64 },
}

/// A generator specification.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub design: Design,
    pub n: usize,
    pub p: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Closed-form true CATE: an affine function of the first conditioning
/// coordinate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrueCate {
    pub intercept: f64,
    pub slope: f64,
}

impl TrueCate {
    pub fn eval(&self, x1: f64) -> f64 {
        self.intercept + self.slope * x1
    }
}

/// A generated sample plus the ground truth that produced it.
#[derive(Debug, Clone)]
pub struct GeneratedSample {
    pub sample: Sample,
    pub true_cate: TrueCate,
    /// Outcome and treatment index coefficients (beta, gamma).
    pub true_coeffs: (Vec<f64>, Vec<f64>),
}

/// Generates a sample from the specification.
pub fn generate(spec: &DgpSpec) -> Result<GeneratedSample> {
    match spec.design {
        Design::StrictSparse => gen_dgp1(spec.n, spec.p, spec.seed),
        Design::ApproxSparse { r2 } => gen_dgp2(spec.n, spec.p, r2, spec.seed),
    }
}

const ACTIVE_COUNT: usize = 4;

/// Strict-sparsity design: `Y(1) = 10 + sum_k beta_k X_k + eps`, `Y(0) = 0`,
/// `beta_k = 1` for the first four coordinates and zero beyond; treatment
/// from a logistic index with `gamma_k = 0.5` on the same coordinates;
/// independent standard normal covariates. True CATE: `10 + x_1`.
pub fn gen_dgp1(n: usize, p: usize, seed: u64) -> Result<GeneratedSample> {
    if p < ACTIVE_COUNT {
        return Err(Error::invalid("strict-sparse design needs p >= 4"));
    }
    if n < 2 {
        return Err(Error::invalid("need at least 2 observations"));
    }
    let mut beta = vec![0.0_f64; p];
    let mut gamma = vec![0.0_f64; p];
    for k in 0..ACTIVE_COUNT {
        beta[k] = 1.0;
        gamma[k] = 0.5;
    }

    let mut rng = stream_rng(seed, purpose::DGP, 0);
    let mut data = vec![0.0_f64; n * p];
    for v in data.iter_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let x = Mat::new(n, p, data)?;
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let u: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();

    let (y, d) = outcomes_and_treatment(&x, &beta, &gamma, 10.0, &eps, &u);
    let sample = Sample::new(y, d, x, vec![0])?;
    Ok(GeneratedSample {
        sample,
        true_cate: TrueCate {
            intercept: 10.0,
            slope: 1.0,
        },
        true_coeffs: (beta, gamma),
    })
}

/// Quadratic form `theta' Sigma theta` with `theta_k = 1/k^2` and
/// `Sigma_kj = 0.5^|j-k|`, over the full `p x p` matrix.
///
/// Uses the backward recursion `S_k = 0.5 (theta_{k+1} + S_{k+1})` for the
/// off-diagonal mass, which is O(p).
pub fn toeplitz_quadform(p: usize) -> f64 {
    let theta: Vec<f64> = (1..=p).map(|k| 1.0 / (k as f64 * k as f64)).collect();
    let mut diag = 0.0;
    for t in &theta {
        diag += t * t;
    }
    // s[k] = sum_{j>k} theta_j 0.5^(j-k), built backwards.
    let mut off = 0.0;
    let mut s = 0.0;
    for k in (0..p).rev() {
        off += theta[k] * s;
        s = 0.5 * (theta[k] + s);
    }
    diag + 2.0 * off
}

/// Scale constants for the approximate-sparsity design at the given
/// (pseudo) R-squared: `(c_d, c_y)`.
pub fn dwindling_scales(p: usize, r2: f64) -> Result<(f64, f64)> {
    if !(r2 > 0.0 && r2 < 1.0) {
        return Err(Error::invalid("r2 must lie in (0,1)"));
    }
    let q = toeplitz_quadform(p);
    let c_d = ((std::f64::consts::PI.powi(2) / 3.0) * r2 / ((1.0 - r2) * q)).sqrt();
    let c_y = (r2 / ((1.0 - r2) * q)).sqrt();
    Ok((c_d, c_y))
}

/// Approximate-sparsity design with dwindling coefficients
/// `theta_k = 1/k^2` scaled by `(c_d, c_y)`. The first covariate is standard
/// normal independent of the rest; the remaining covariates follow a
/// stationary AR(1) with correlation `0.5^|j-k|` among themselves. True
/// CATE: `c_y * x_1`.
pub fn gen_dgp2(n: usize, p: usize, r2: f64, seed: u64) -> Result<GeneratedSample> {
    if p < 2 {
        return Err(Error::invalid("approximate-sparse design needs p >= 2"));
    }
    if n < 2 {
        return Err(Error::invalid("need at least 2 observations"));
    }
    let (c_d, c_y) = dwindling_scales(p, r2)?;
    let beta: Vec<f64> = (1..=p).map(|k| c_y / (k as f64 * k as f64)).collect();
    let gamma: Vec<f64> = (1..=p).map(|k| c_d / (k as f64 * k as f64)).collect();

    let mut rng = stream_rng(seed, purpose::DGP, 0);
    let rho = 0.5_f64;
    let innov = (1.0 - rho * rho).sqrt();
    let mut data = vec![0.0_f64; n * p];
    for i in 0..n {
        let row = &mut data[i * p..(i + 1) * p];
        row[0] = StandardNormal.sample(&mut rng);
        let mut prev: f64 = StandardNormal.sample(&mut rng);
        row[1] = prev;
        for slot in row.iter_mut().skip(2) {
            let z: f64 = StandardNormal.sample(&mut rng);
            prev = rho * prev + innov * z;
            *slot = prev;
        }
    }
    let x = Mat::new(n, p, data)?;
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let u: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();

    let (y, d) = outcomes_and_treatment(&x, &beta, &gamma, 0.0, &eps, &u);
    let sample = Sample::new(y, d, x, vec![0])?;
    Ok(GeneratedSample {
        sample,
        true_cate: TrueCate {
            intercept: 0.0,
            slope: c_y,
        },
        true_coeffs: (beta, gamma),
    })
}

/// `Y(1) = intercept + x'beta + eps`, `Y(0) = 0`, `Y = D Y(1)`, and
/// `D = 1{Lambda(x'gamma) > U}`.
fn outcomes_and_treatment(
    x: &Mat,
    beta: &[f64],
    gamma: &[f64],
    intercept: f64,
    eps: &[f64],
    u: &[f64],
) -> (Vec<f64>, Vec<u8>) {
    let n = x.nrows();
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mut y_index = intercept + eps[i];
        let mut d_index = 0.0;
        for ((&xv, &b), &g) in row.iter().zip(beta).zip(gamma) {
            y_index += xv * b;
            d_index += xv * g;
        }
        let treated = u8::from(logistic_cdf(d_index) > u[i]);
        d.push(treated);
        y.push(f64::from(treated) * y_index);
    }
    (y, d)
}

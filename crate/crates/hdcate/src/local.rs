//! Weighted local linear and local constant regression with a product
//! Gaussian kernel, kernel density estimation, and the rule-of-thumb
//! undersmoothing bandwidth.

use crate::error::{Error, Result};
use crate::mat::{sample_std, Mat};
use crate::norm::norm_pdf;

/// Kernel weights below this are treated as exactly zero.
pub const WEIGHT_FLOOR: f64 = 1e-300;
/// A local design is degenerate when the smallest eigenvalue of the weighted
/// normal matrix falls below this fraction of its trace.
pub const DEGENERACY_REL_TOL: f64 = 1e-12;

/// Kernel shape. Only the Gaussian ships; the enum leaves room for others.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Gaussian,
}

/// Product kernel with per-coordinate bandwidths.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidths: Vec<f64>,
}

impl KernelSpec {
    pub fn gaussian(bandwidths: Vec<f64>) -> Result<Self> {
        if bandwidths.is_empty() || bandwidths.len() > 3 {
            return Err(Error::invalid("kernel dimension must be between 1 and 3"));
        }
        if bandwidths.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(Error::invalid("bandwidths must be positive"));
        }
        Ok(KernelSpec {
            kind: KernelKind::Gaussian,
            bandwidths,
        })
    }

    pub fn dimension(&self) -> usize {
        self.bandwidths.len()
    }

    /// Product of the bandwidths (the `h^d` factor for equal bandwidths).
    pub fn bandwidth_product(&self) -> f64 {
        self.bandwidths.iter().product()
    }
}

/// Product of standard normal densities over the coordinates of `u`.
pub fn gaussian_product_kernel(u: &[f64]) -> f64 {
    u.iter().map(|&t| norm_pdf(t)).product()
}

/// Kernel weight at offset `z` with bandwidths `h`: the product kernel
/// evaluated at `z / h` coordinate-wise, floored to zero below
/// [`WEIGHT_FLOOR`].
#[inline]
pub(crate) fn kernel_weight(z: &[f64], h: &[f64]) -> f64 {
    let mut w = 1.0;
    for (zi, hi) in z.iter().zip(h) {
        w *= norm_pdf(zi / hi);
    }
    if w < WEIGHT_FLOOR {
        0.0
    } else {
        w
    }
}

/// Rule-of-thumb undersmoothing bandwidth from given per-coordinate standard
/// deviations: `1.06 * sigma_j * n^(-2/(4+3d))`.
pub fn rot_bandwidth_from_sigma(sigma: &[f64], n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid("bandwidth rule needs n >= 2"));
    }
    let d = sigma.len();
    if d == 0 || d > 3 {
        return Err(Error::invalid(
            "conditioning dimension must be between 1 and 3",
        ));
    }
    let expo = -2.0 / (4.0 + 3.0 * d as f64);
    sigma
        .iter()
        .map(|&s| {
            if !(s > 0.0) {
                return Err(Error::invalid(
                    "conditioning coordinate has zero standard deviation",
                ));
            }
            Ok(1.06 * s * (n as f64).powf(expo))
        })
        .collect()
}

/// Rule-of-thumb bandwidth computed from the data (sample standard deviation
/// per coordinate).
pub fn rot_bandwidth(x1: &Mat) -> Result<Vec<f64>> {
    let sigma: Vec<f64> = (0..x1.ncols())
        .map(|j| sample_std(&x1.col_copy(j)))
        .collect();
    rot_bandwidth_from_sigma(&sigma, x1.nrows())
}

/// Result of a weighted local fit at one evaluation point.
#[derive(Debug, Clone)]
pub struct LocalFit {
    /// Intercept: the regression-function estimate at the evaluation point.
    pub intercept: f64,
    pub slope: Vec<f64>,
    /// Sum of the combined (multiplier times kernel) weights.
    pub effective_mass: f64,
    /// Set when the local design was degenerate and the fit fell back to the
    /// local constant estimate with zero slope.
    pub degenerate: bool,
}

/// Accumulator for the (d+1)-dimensional weighted normal equations at one
/// evaluation point.
pub(crate) struct LocalAccum {
    d: usize,
    m: [f64; 16],
    v: [f64; 4],
    mass: f64,
    nonzero: usize,
}

impl LocalAccum {
    pub(crate) fn new(d: usize) -> Self {
        debug_assert!((1..=3).contains(&d));
        LocalAccum {
            d,
            m: [0.0; 16],
            v: [0.0; 4],
            mass: 0.0,
            nonzero: 0,
        }
    }

    /// Adds one observation with offset `z` (length d), combined weight `w`,
    /// and response `psi`.
    #[inline]
    pub(crate) fn add(&mut self, z: &[f64], w: f64, psi: f64) {
        if w == 0.0 {
            return;
        }
        self.mass += w;
        self.nonzero += 1;
        let dim = self.d + 1;
        let mut basis = [1.0_f64; 4];
        basis[1..=self.d].copy_from_slice(&z[..self.d]);
        for a in 0..dim {
            let wa = w * basis[a];
            self.v[a] += wa * psi;
            for b in a..dim {
                self.m[a * dim + b] += wa * basis[b];
            }
        }
    }

    fn symmetrized(&self) -> [f64; 16] {
        let dim = self.d + 1;
        let mut m = self.m;
        for a in 0..dim {
            for b in 0..a {
                m[a * dim + b] = m[b * dim + a];
            }
        }
        m
    }

    /// Weighted mean of the responses (the local constant estimate), if the
    /// total mass is usable.
    pub(crate) fn constant_fit(&self) -> Option<f64> {
        let v = self.v[0] / self.mass;
        v.is_finite().then_some(v)
    }

    /// Solves the normal equations, falling back to the local constant fit
    /// with zero slope when the design is degenerate.
    pub(crate) fn solve(&self) -> Option<LocalFit> {
        let dim = self.d + 1;
        let fallback = |mass: f64, degenerate: bool| -> Option<LocalFit> {
            self.constant_fit().map(|c| LocalFit {
                intercept: c,
                slope: vec![0.0; self.d],
                effective_mass: mass,
                degenerate,
            })
        };
        if self.nonzero < dim {
            return fallback(self.mass, true);
        }
        let m = self.symmetrized();
        let trace: f64 = (0..dim).map(|a| m[a * dim + a]).sum();
        let lam_min = smallest_eigenvalue(&m, dim);
        if !(lam_min >= DEGENERACY_REL_TOL * trace) {
            return fallback(self.mass, true);
        }
        let sol = solve_dense(&m, &self.v, dim)?;
        if sol.iter().any(|s| !s.is_finite()) {
            return fallback(self.mass, true);
        }
        Some(LocalFit {
            intercept: sol[0],
            slope: sol[1..dim].to_vec(),
            effective_mass: self.mass,
            degenerate: false,
        })
    }
}

/// Smallest eigenvalue of a symmetric `dim x dim` matrix (dim <= 4): closed
/// form for 2x2, cyclic Jacobi otherwise.
fn smallest_eigenvalue(m: &[f64; 16], dim: usize) -> f64 {
    if dim == 2 {
        let (a, b, c) = (m[0], m[1], m[3]);
        let mid = 0.5 * (a + c);
        let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        return mid - rad;
    }
    // Repack from stride `dim` into the fixed stride-4 working layout.
    let mut a = [0.0_f64; 16];
    for r in 0..dim {
        for c in 0..dim {
            a[r * 4 + c] = m[r * dim + c];
        }
    }
    for _sweep in 0..50 {
        let mut off = 0.0_f64;
        for p in 0..dim {
            for q in p + 1..dim {
                off += a[p * 4 + q] * a[p * 4 + q];
            }
        }
        // Work in a fixed 4-stride layout for simplicity.
        if off < 1e-30 {
            break;
        }
        for p in 0..dim {
            for q in p + 1..dim {
                let apq = a[p * 4 + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * 4 + q] - a[p * 4 + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[k * 4 + p];
                    let akq = a[k * 4 + q];
                    a[k * 4 + p] = c * akp - s * akq;
                    a[k * 4 + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[p * 4 + k];
                    let aqk = a[q * 4 + k];
                    a[p * 4 + k] = c * apk - s * aqk;
                    a[q * 4 + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..dim).map(|i| a[i * 4 + i]).fold(f64::INFINITY, f64::min)
}

/// Gaussian elimination with partial pivoting; `m` is `dim x dim` packed at
/// stride `dim` in a 16-slot array.
fn solve_dense(m: &[f64; 16], v: &[f64; 4], dim: usize) -> Option<Vec<f64>> {
    let mut a = [[0.0_f64; 5]; 4];
    for r in 0..dim {
        for c in 0..dim {
            a[r][c] = m[r * dim + c];
        }
        a[r][dim] = v[r];
    }
    for col in 0..dim {
        let piv = (col..dim)
            .max_by(|&r1, &r2| a[r1][col].abs().partial_cmp(&a[r2][col].abs()).unwrap())?;
        if a[piv][col] == 0.0 {
            return None;
        }
        a.swap(col, piv);
        for r in col + 1..dim {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..=dim {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0_f64; dim];
    for r in (0..dim).rev() {
        let mut s = a[r][dim];
        for c in r + 1..dim {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    Some(x)
}

fn validate_local_inputs(
    x1: &Mat,
    responses: &[f64],
    multipliers: &[f64],
    x0: &[f64],
    kernel: &KernelSpec,
) -> Result<()> {
    let n = x1.nrows();
    let d = kernel.dimension();
    if x1.ncols() != d || x0.len() != d {
        return Err(Error::invalid(
            "evaluation point / kernel / data dimensions disagree",
        ));
    }
    if responses.len() != n || multipliers.len() != n {
        return Err(Error::invalid("responses and multipliers must match rows"));
    }
    if multipliers.iter().any(|m| !m.is_finite()) {
        return Err(Error::invalid("multipliers must be finite"));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("evaluation point must be finite"));
    }
    Ok(())
}

/// Weighted local linear fit at `x0` with combined weights
/// `multiplier_i * K_h(x1_i - x0)`.
pub fn local_linear_fit(
    x1: &Mat,
    responses: &[f64],
    multipliers: &[f64],
    x0: &[f64],
    kernel: &KernelSpec,
) -> Result<LocalFit> {
    validate_local_inputs(x1, responses, multipliers, x0, kernel)?;
    let d = kernel.dimension();
    let mut acc = LocalAccum::new(d);
    let mut z = [0.0_f64; 3];
    for i in 0..x1.nrows() {
        let row = x1.row(i);
        for j in 0..d {
            z[j] = row[j] - x0[j];
        }
        let k = kernel_weight(&z[..d], &kernel.bandwidths);
        acc.add(&z[..d], multipliers[i] * k, responses[i]);
    }
    acc.solve()
        .ok_or_else(|| Error::numerical("no kernel mass at the evaluation point"))
}

/// Weighted local constant fit: the weighted mean of the responses with
/// weights `multiplier_i * K_h(x1_i - x0)`.
pub fn local_constant_fit(
    x1: &Mat,
    responses: &[f64],
    multipliers: &[f64],
    x0: &[f64],
    kernel: &KernelSpec,
) -> Result<f64> {
    validate_local_inputs(x1, responses, multipliers, x0, kernel)?;
    let d = kernel.dimension();
    let mut acc = LocalAccum::new(d);
    let mut z = [0.0_f64; 3];
    for i in 0..x1.nrows() {
        let row = x1.row(i);
        for j in 0..d {
            z[j] = row[j] - x0[j];
        }
        let k = kernel_weight(&z[..d], &kernel.bandwidths);
        acc.add(&z[..d], multipliers[i] * k, responses[i]);
    }
    acc.constant_fit()
        .ok_or_else(|| Error::numerical("zero kernel mass at the evaluation point"))
}

/// Kernel density estimate at `x0`: `sum_i K_h(x1_i - x0) / (n * prod_j h_j)`.
pub fn kernel_density(x1: &Mat, x0: &[f64], kernel: &KernelSpec) -> Result<f64> {
    let d = kernel.dimension();
    if x1.ncols() != d || x0.len() != d {
        return Err(Error::invalid(
            "evaluation point / kernel / data dimensions disagree",
        ));
    }
    if x1.nrows() == 0 {
        return Err(Error::invalid("density needs at least one observation"));
    }
    let mut total = 0.0;
    let mut z = [0.0_f64; 3];
    for i in 0..x1.nrows() {
        let row = x1.row(i);
        for j in 0..d {
            z[j] = row[j] - x0[j];
        }
        total += kernel_weight(&z[..d], &kernel.bandwidths);
    }
    Ok(total / (x1.nrows() as f64 * kernel.bandwidth_product()))
}

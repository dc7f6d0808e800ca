//! The doubly-robust transformed outcome: its conditional mean given the
//! conditioning coordinate equals the CATE, and it is first-order insensitive
//! to errors in the fitted nuisance functions.

use crate::error::{Error, Result};
use crate::nuisance::{predict_mu, predict_pi, NuisanceFit, Sample};

/// Scores evaluated on a set of rows.
#[derive(Debug, Clone)]
pub struct ScoreVector {
    pub values: Vec<f64>,
    /// Rows the scores belong to, aligned with `values`.
    pub eval_indices: Vec<usize>,
}

/// Doubly-robust score for one observation:
/// `d (y - mu1)/pi + mu1 - (1 - d)(y - mu0)/(1 - pi) - mu0`.
#[inline]
pub fn dr_score(y: f64, d: u8, mu0: f64, mu1: f64, pi: f64) -> f64 {
    debug_assert!(pi > 0.0 && pi < 1.0);
    let d_f = f64::from(d);
    d_f * (y - mu1) / pi + mu1 - (1.0 - d_f) * (y - mu0) / (1.0 - pi) - mu0
}

/// Elementwise scores over `eval_indices` with predictions from `fit`.
pub fn score_vector(
    sample: &Sample,
    eval_indices: &[usize],
    fit: &NuisanceFit,
) -> Result<ScoreVector> {
    let mut values = Vec::with_capacity(eval_indices.len());
    for &i in eval_indices {
        if i >= sample.n() {
            return Err(Error::invalid(format!("row index {i} out of range")));
        }
        let row = sample.x().row(i);
        let mu0 = predict_mu(fit, 0, row);
        let mu1 = predict_mu(fit, 1, row);
        let pi = predict_pi(fit, row);
        values.push(dr_score(sample.y()[i], sample.d()[i], mu0, mu1, pi));
    }
    Ok(ScoreVector {
        values,
        eval_indices: eval_indices.to_vec(),
    })
}

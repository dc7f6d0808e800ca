//! Monte Carlo harness: seeded parallel replications, coverage and accuracy
//! aggregation, and resumable checkpoints.

use std::fmt;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{generate, DgpSpec};
use crate::error::{Error, Result};
use crate::estimator::{cate_cross_fit, cate_full_sample, EstimatorOptions, EvalGrid, Method};
use crate::inference::{bootstrap_curves, critical_value, uniform_band, BandSide};
use crate::rng::child_seed;

pub const REPORT_FORMAT_VERSION: u32 = 1;
const MAX_ATTEMPTS: u64 = 3;

/// One-dimensional grid specification. When absent, the grid defaults to 201
/// equally spaced points between the 2nd and 98th sample percentiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

/// A Monte Carlo experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McConfig {
    /// Generator template; its `seed` field is ignored (per-replication
    /// seeds derive from `root_seed`).
    pub dgp: DgpSpec,
    pub replications: usize,
    pub method: Method,
    pub bootstrap_reps: usize,
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    pub eval_points: Vec<f64>,
    pub root_seed: u64,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::invalid("need at least one replication"));
        }
        if self.bootstrap_reps < 1 {
            return Err(Error::invalid("need at least one bootstrap replication"));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::invalid("alphas must lie in (0,1)"));
        }
        if let Some(g) = &self.grid {
            if !(g.lo < g.hi) || g.points < 2 {
                return Err(Error::invalid("grid must satisfy lo < hi with >= 2 points"));
            }
        }
        if let Method::CrossFit { k } = self.method {
            if k < 2 {
                return Err(Error::invalid("cross-fitting needs at least 2 folds"));
            }
        }
        Ok(())
    }
}

/// Per-replication record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub attempts: u64,
    pub failed: bool,
    /// Coverage of the two-sided uniform band, per alpha.
    pub covered: Vec<bool>,
    /// Two-sided bootstrap critical value, per alpha.
    pub crit: Vec<f64>,
    pub tau_at_eval: Vec<f64>,
    pub se_at_eval: Vec<f64>,
    pub true_at_eval: Vec<f64>,
}

/// Coverage statistics at one confidence level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaStats {
    pub alpha: f64,
    /// Empirical uniform coverage.
    pub emp: f64,
    /// Mean two-sided critical value.
    pub mcri: f64,
    /// Standard deviation of the critical value.
    pub sdcri: f64,
}

/// Accuracy statistics at one evaluation point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalStats {
    pub x1: f64,
    pub bias: f64,
    pub sd: f64,
    /// Average estimated standard error.
    pub ase: f64,
    pub rmse: f64,
}

/// Aggregated Monte Carlo report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McReport {
    pub format_version: u32,
    pub config: McConfig,
    pub alpha_stats: Vec<AlphaStats>,
    pub eval_stats: Vec<EvalStats>,
    pub replications_attempted: usize,
    pub replications_failed: usize,
    /// Wall time of the run; excluded from serialization so identical
    /// configurations produce identical report files.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

impl fmt::Display for McReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "replications: {} ({} failed), method: {:?}, B: {}",
            self.replications_attempted,
            self.replications_failed,
            self.config.method,
            self.config.bootstrap_reps
        )?;
        writeln!(
            f,
            "{:>8} {:>8} {:>8} {:>8}",
            "level", "EMP", "Mcri", "Sdcri"
        )?;
        for a in &self.alpha_stats {
            writeln!(
                f,
                "{:>7.0}% {:>8.3} {:>8.3} {:>8.3}",
                100.0 * (1.0 - a.alpha),
                a.emp,
                a.mcri,
                a.sdcri
            )?;
        }
        writeln!(
            f,
            "{:>8} {:>8} {:>8} {:>8} {:>8}",
            "x1", "BIAS", "SD", "ASE", "RMSE"
        )?;
        for e in &self.eval_stats {
            writeln!(
                f,
                "{:>8.2} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
                e.x1, e.bias, e.sd, e.ase, e.rmse
            )?;
        }
        Ok(())
    }
}

/// Derived seeds for one replication attempt: (data, folds, bootstrap).
pub(crate) fn attempt_seeds(root_seed: u64, rep: usize, attempt: u64) -> (u64, u64, u64) {
    let rep_seed = child_seed(root_seed, rep as u64);
    let base = child_seed(rep_seed, attempt);
    (
        child_seed(base, 0),
        child_seed(base, 1),
        child_seed(base, 2),
    )
}

/// Runs one replication: generate, estimate, bootstrap, and record coverage
/// and accuracy. Fold-arm failures are retried with derived sub-seeds up to
/// three times; a replication that keeps failing is recorded as failed.
pub fn run_replication(config: &McConfig, rep: usize) -> Result<RepRecord> {
    let mut attempts = 0;
    for attempt in 0..MAX_ATTEMPTS {
        attempts += 1;
        let (dgp_seed, fold_seed, boot_seed) = attempt_seeds(config.root_seed, rep, attempt);
        let mut spec = config.dgp.clone();
        spec.seed = dgp_seed;
        let generated = generate(&spec)?;
        let sample = &generated.sample;

        let grid = match &config.grid {
            Some(g) => EvalGrid::equally_spaced(g.lo, g.hi, g.points)?,
            None => EvalGrid::from_sample_percentiles(sample, 201)?,
        };

        let options = EstimatorOptions::default();
        let curve = match config.method {
            Method::FullSample => cate_full_sample(sample, &grid, None, &options),
            Method::CrossFit { k } => cate_cross_fit(sample, k, &grid, None, fold_seed, &options),
        };
        let curve = match curve {
            Ok(c) => c,
            Err(Error::ArmTooSmall { .. }) => continue,
            Err(e) => return Err(e),
        };

        let draws = bootstrap_curves(sample, &curve, config.bootstrap_reps, boot_seed)?;
        let truth: Vec<f64> = grid
            .points
            .iter()
            .map(|pt| generated.true_cate.eval(pt[0]))
            .collect();

        let mut covered = Vec::with_capacity(config.alphas.len());
        let mut crit = Vec::with_capacity(config.alphas.len());
        for &alpha in &config.alphas {
            let c = critical_value(&draws.sup_two_sided, alpha)?;
            let band = uniform_band(&curve, c, alpha, BandSide::Two)?;
            covered.push(band.covers(&truth));
            crit.push(c);
        }

        let eval_pts: Vec<Vec<f64>> = config.eval_points.iter().map(|&x| vec![x]).collect();
        let (tau_at_eval, sigma_at_eval) = curve.evaluate_at(sample, &eval_pts)?;
        let scale = curve.nh().sqrt();
        let se_at_eval = sigma_at_eval.iter().map(|s| s / scale).collect();
        let true_at_eval = config
            .eval_points
            .iter()
            .map(|&x| generated.true_cate.eval(x))
            .collect();

        return Ok(RepRecord {
            rep,
            attempts,
            failed: false,
            covered,
            crit,
            tau_at_eval,
            se_at_eval,
            true_at_eval,
        });
    }
    Ok(RepRecord {
        rep,
        attempts,
        failed: true,
        covered: Vec::new(),
        crit: Vec::new(),
        tau_at_eval: Vec::new(),
        se_at_eval: Vec::new(),
        true_at_eval: Vec::new(),
    })
}

/// Aggregates per-replication records into the report. Failed replications
/// are excluded from the statistics but counted in the metadata.
pub fn aggregate(config: &McConfig, records: &[RepRecord]) -> Result<McReport> {
    let ok: Vec<&RepRecord> = records.iter().filter(|r| !r.failed).collect();
    if ok.is_empty() {
        return Err(Error::invalid("no successful replications to aggregate"));
    }
    let n_ok = ok.len() as f64;

    let mut alpha_stats = Vec::with_capacity(config.alphas.len());
    for (ai, &alpha) in config.alphas.iter().enumerate() {
        let emp = ok.iter().filter(|r| r.covered[ai]).count() as f64 / n_ok;
        let crits: Vec<f64> = ok.iter().map(|r| r.crit[ai]).collect();
        let mcri = crits.iter().sum::<f64>() / n_ok;
        let sdcri = if crits.len() > 1 {
            crate::mat::pop_std(&crits)
        } else {
            0.0
        };
        alpha_stats.push(AlphaStats {
            alpha,
            emp,
            mcri,
            sdcri,
        });
    }

    let mut eval_stats = Vec::with_capacity(config.eval_points.len());
    for (j, &x1) in config.eval_points.iter().enumerate() {
        let taus: Vec<f64> = ok.iter().map(|r| r.tau_at_eval[j]).collect();
        let errs: Vec<f64> = ok
            .iter()
            .map(|r| r.tau_at_eval[j] - r.true_at_eval[j])
            .collect();
        let bias = errs.iter().sum::<f64>() / n_ok;
        let sd = crate::mat::pop_std(&taus);
        let ase = ok.iter().map(|r| r.se_at_eval[j]).sum::<f64>() / n_ok;
        let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / n_ok).sqrt();
        debug_assert!((rmse * rmse - bias * bias - sd * sd).abs() <= 1e-8);
        eval_stats.push(EvalStats {
            x1,
            bias,
            sd,
            ase,
            rmse,
        });
    }

    Ok(McReport {
        format_version: REPORT_FORMAT_VERSION,
        config: config.clone(),
        alpha_stats,
        eval_stats,
        replications_attempted: records.len(),
        replications_failed: records.len() - ok.len(),
        wall_time_secs: 0.0,
    })
}

/// Resumable on-disk state.
#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config: McConfig,
    records: Vec<RepRecord>,
}

/// Runs the whole experiment. Replications execute in parallel in chunks;
/// after each chunk the completed records are checkpointed to `state_path`
/// (when given), and a run restarted with the same configuration resumes
/// from the checkpoint. The final report is identical either way.
pub fn run(
    config: &McConfig,
    state_path: Option<&Path>,
    mut progress: Option<&mut dyn FnMut(usize, usize)>,
) -> Result<McReport> {
    config.validate()?;
    let start = Instant::now();

    let mut records: Vec<RepRecord> = Vec::new();
    if let Some(path) = state_path {
        if path.exists() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::invalid(format!("cannot read checkpoint: {e}")))?;
            let cp: Checkpoint = serde_json::from_str(&text)
                .map_err(|e| Error::invalid(format!("cannot parse checkpoint: {e}")))?;
            let same_config = serde_json::to_string(&cp.config).unwrap()
                == serde_json::to_string(config).unwrap();
            if cp.format_version != REPORT_FORMAT_VERSION || !same_config {
                return Err(Error::invalid(
                    "checkpoint does not match the requested configuration",
                ));
            }
            records = cp.records;
            records.truncate(config.replications);
        }
    }

    let interval = (config.replications / 20).max(1);
    while records.len() < config.replications {
        let lo = records.len();
        let hi = (lo + interval).min(config.replications);
        let chunk: Vec<RepRecord> = (lo..hi)
            .into_par_iter()
            .map(|rep| run_replication(config, rep))
            .collect::<Result<Vec<_>>>()?;
        records.extend(chunk);
        if let Some(path) = state_path {
            write_checkpoint(path, config, &records)?;
        }
        if let Some(cb) = progress.as_deref_mut() {
            cb(records.len(), config.replications);
        }
    }

    let mut report = aggregate(config, &records)?;
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

fn write_checkpoint(path: &Path, config: &McConfig, records: &[RepRecord]) -> Result<()> {
    let cp = Checkpoint {
        format_version: REPORT_FORMAT_VERSION,
        config: config.clone(),
        records: records.to_vec(),
    };
    let text = serde_json::to_string(&cp)
        .map_err(|e| Error::invalid(format!("cannot serialize checkpoint: {e}")))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)
        .map_err(|e| Error::invalid(format!("cannot write checkpoint: {e}")))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| Error::invalid(format!("cannot move checkpoint into place: {e}")))?;
    Ok(())
}

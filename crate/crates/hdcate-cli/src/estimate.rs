//! The `estimate` subcommand: CATE estimation on a CSV dataset.

use std::fs;
use std::path::Path;

use serde::Serialize;

use hdcate::estimator::{
    cate_cross_fit, cate_full_sample, CateCurve, EstimatorOptions, EvalGrid, Method,
};
use hdcate::inference::{bootstrap_curves, critical_value, pointwise_band, uniform_band, BandSide};
use hdcate::nuisance::NuisanceFit;
use hdcate::rng::child_seed;

use crate::config::EstimateConfig;
use crate::data::{load_dataset, Dataset};
use crate::CliError;

pub const ESTIMATE_FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct BandOut {
    alpha: f64,
    critical_value: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize)]
struct SelectedVariables {
    mu0: Vec<String>,
    mu1: Vec<String>,
    pi: Vec<String>,
}

#[derive(Serialize)]
struct Metadata {
    n: usize,
    dictionary_size: usize,
    dictionary_names: Vec<String>,
    method: Method,
    bootstrap_reps: usize,
    alphas: Vec<f64>,
    bandwidth: Vec<f64>,
    seed: u64,
    selected_per_fold: Vec<SelectedVariables>,
    selected_union: SelectedVariables,
}

#[derive(Serialize)]
struct EstimateOutput {
    format_version: u32,
    metadata: Metadata,
    grid: Vec<Vec<f64>>,
    tau: Vec<f64>,
    slope: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    degenerate: Vec<bool>,
    pointwise_bands: Vec<BandOut>,
    uniform_bands: Vec<BandOut>,
}

fn selected_names(fit: &NuisanceFit, names: &[String]) -> SelectedVariables {
    let pick = |support: &[usize]| support.iter().map(|&j| names[j].clone()).collect();
    SelectedVariables {
        mu0: pick(&fit.fit_mu0.support),
        mu1: pick(&fit.fit_mu1.support),
        pi: pick(&fit.fit_pi.support),
    }
}

fn union_names(fits: &[NuisanceFit], names: &[String]) -> SelectedVariables {
    let union = |get: &dyn Fn(&NuisanceFit) -> &[usize]| -> Vec<String> {
        let mut mask = vec![false; names.len()];
        for f in fits {
            for &j in get(f) {
                mask[j] = true;
            }
        }
        mask.iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(j, _)| names[j].clone())
            .collect()
    };
    SelectedVariables {
        mu0: union(&|f| &f.fit_mu0.support),
        mu1: union(&|f| &f.fit_mu1.support),
        pi: union(&|f| &f.fit_pi.support),
    }
}

pub fn run(config: &EstimateConfig, output_override: Option<&Path>) -> Result<(), CliError> {
    validate(config)?;
    let Dataset {
        sample,
        dictionary_names,
    } = load_dataset(config)?;

    let grid = match &config.grid {
        Some(g) => EvalGrid::equally_spaced(g.lo, g.hi, g.points)
            .map_err(|e| CliError::config(format!("bad grid: {e}")))?,
        None => EvalGrid::from_sample_percentiles(&sample, 201)
            .map_err(|e| CliError::data(format!("cannot build default grid: {e}")))?,
    };

    let options = EstimatorOptions::default();
    let fold_seed = child_seed(config.seed, 1);
    let boot_seed = child_seed(config.seed, 2);
    let curve: CateCurve = match config.method {
        Method::FullSample => cate_full_sample(&sample, &grid, config.bandwidth.clone(), &options),
        Method::CrossFit { k } => cate_cross_fit(
            &sample,
            k,
            &grid,
            config.bandwidth.clone(),
            fold_seed,
            &options,
        ),
    }
    .map_err(CliError::from_estimation)?;

    let draws = bootstrap_curves(&sample, &curve, config.bootstrap_reps, boot_seed)
        .map_err(CliError::from_estimation)?;

    let mut pointwise_bands = Vec::new();
    let mut uniform_bands = Vec::new();
    for &alpha in &config.alphas {
        let pw = pointwise_band(&curve, alpha, BandSide::Two).map_err(CliError::from_estimation)?;
        pointwise_bands.push(BandOut {
            alpha,
            critical_value: pw.critical_value,
            lower: pw.lower,
            upper: pw.upper,
        });
        let c = critical_value(&draws.sup_two_sided, alpha).map_err(CliError::from_estimation)?;
        let un =
            uniform_band(&curve, c, alpha, BandSide::Two).map_err(CliError::from_estimation)?;
        uniform_bands.push(BandOut {
            alpha,
            critical_value: c,
            lower: un.lower,
            upper: un.upper,
        });
    }

    let out = EstimateOutput {
        format_version: ESTIMATE_FORMAT_VERSION,
        metadata: Metadata {
            n: sample.n(),
            dictionary_size: sample.p(),
            dictionary_names: dictionary_names.clone(),
            method: config.method,
            bootstrap_reps: config.bootstrap_reps,
            alphas: config.alphas.clone(),
            bandwidth: curve.h.clone(),
            seed: config.seed,
            selected_per_fold: curve
                .fold_fits
                .iter()
                .map(|f| selected_names(f, &dictionary_names))
                .collect(),
            selected_union: union_names(&curve.fold_fits, &dictionary_names),
        },
        grid: grid.points.clone(),
        tau: curve.tau.clone(),
        slope: curve.slope.clone(),
        sigma: curve.sigma.clone(),
        degenerate: curve.degenerate.clone(),
        pointwise_bands,
        uniform_bands,
    };

    let out_dir = output_override
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| Path::new(&config.output).to_path_buf());
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::config(format!("cannot create output directory: {e}")))?;

    let json_path = out_dir.join("estimate.json");
    let json = serde_json::to_string_pretty(&out)
        .map_err(|e| CliError::numerical(format!("serialization failed: {e}")))?;
    fs::write(&json_path, json)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", json_path.display())))?;

    let csv_path = out_dir.join("estimate.csv");
    fs::write(&csv_path, flat_table(&out, sample.d_cond()))
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", csv_path.display())))?;

    println!(
        "estimated {} grid points (n = {}, dictionary = {}); wrote {} and {}",
        out.grid.len(),
        out.metadata.n,
        out.metadata.dictionary_size,
        json_path.display(),
        csv_path.display()
    );
    Ok(())
}

fn validate(config: &EstimateConfig) -> Result<(), CliError> {
    if config.bootstrap_reps < 1 {
        return Err(CliError::config("bootstrap_reps must be at least 1"));
    }
    if config.alphas.is_empty() || config.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(CliError::config("alphas must lie in (0,1)"));
    }
    if let Method::CrossFit { k } = config.method {
        if k < 2 {
            return Err(CliError::config("cross_fit needs k >= 2"));
        }
    }
    Ok(())
}

/// Percent label without a trailing zero: 0.05 -> "95", 0.1 -> "90".
fn level_label(alpha: f64) -> String {
    let pct = 100.0 * (1.0 - alpha);
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{pct}")
    }
}

fn flat_table(out: &EstimateOutput, d_cond: usize) -> String {
    let mut header: Vec<String> = if d_cond == 1 {
        vec!["x1".into()]
    } else {
        (1..=d_cond).map(|j| format!("x1_{j}")).collect()
    };
    header.push("tau".into());
    if d_cond == 1 {
        header.push("slope".into());
    } else {
        header.extend((1..=d_cond).map(|j| format!("slope_{j}")));
    }
    header.push("sigma".into());
    header.push("pw_lo".into());
    header.push("pw_hi".into());
    for band in &out.uniform_bands {
        let label = level_label(band.alpha);
        header.push(format!("unif_lo_{label}"));
        header.push(format!("unif_hi_{label}"));
    }
    let mut text = header.join(",");
    text.push('\n');

    // Pointwise columns use the first requested level.
    let pw = &out.pointwise_bands[0];
    for g in 0..out.grid.len() {
        let mut fields: Vec<String> = out.grid[g].iter().map(|v| v.to_string()).collect();
        fields.push(out.tau[g].to_string());
        for s in &out.slope[g] {
            fields.push(s.to_string());
        }
        fields.push(out.sigma[g].to_string());
        fields.push(pw.lower[g].to_string());
        fields.push(pw.upper[g].to_string());
        for band in &out.uniform_bands {
            fields.push(band.lower[g].to_string());
            fields.push(band.upper[g].to_string());
        }
        text.push_str(&fields.join(","));
        text.push('\n');
    }
    text
}

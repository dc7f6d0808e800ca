//! Configuration file formats for the CLI.

use serde::{Deserialize, Serialize};

use hdcate::estimator::Method;

/// Which columns serve as controls.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Covariates {
    /// The literal string "all_remaining": every column that is not the
    /// outcome, the treatment, or a conditioning column.
    Tag(AllRemaining),
    /// An explicit list of column names.
    List(Vec<String>),
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum AllRemaining {
    AllRemaining,
}

/// Dictionary expansion applied to the covariate columns.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Expansion {
    /// Use the raw columns.
    #[default]
    None,
    /// Raw columns plus squares of the non-binary columns.
    Squares,
    /// Raw columns plus all monomials of total degree up to `degree`
    /// (squares, interactions, and for degree 3 also cubes and mixed
    /// triples). Degree is capped at 3.
    Interactions { degree: u8 },
}

fn default_alphas() -> Vec<f64> {
    vec![0.05]
}

fn default_bootstrap() -> usize {
    1000
}

/// Grid specification shared with the Monte Carlo config.
pub use hdcate::mc::GridSpec;

/// Configuration for `hdcate estimate`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateConfig {
    /// Path to the input CSV (header row required, complete cases only).
    pub input: String,
    pub outcome: String,
    pub treatment: String,
    /// One to three conditioning column names.
    pub conditioning: Vec<String>,
    pub covariates: Covariates,
    #[serde(default)]
    pub expansion: Expansion,
    pub method: Method,
    #[serde(default = "default_bootstrap")]
    pub bootstrap_reps: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Per-coordinate bandwidth override; computed by the rule of thumb
    /// when absent.
    #[serde(default)]
    pub bandwidth: Option<Vec<f64>>,
    /// Evaluation grid; defaults to 201 points between the 2nd and 98th
    /// percentiles of the conditioning variable (one-dimensional only).
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory.
    pub output: String,
}

//! CSV ingestion and dictionary expansion.

use std::path::Path;

use hdcate::mat::Mat;
use hdcate::nuisance::Sample;

use crate::config::{AllRemaining, Covariates, EstimateConfig, Expansion};
use crate::CliError;

/// A parsed dataset ready for estimation: the sample plus the names of every
/// dictionary column (conditioning columns first, then covariates, then
/// expansion terms).
pub struct Dataset {
    pub sample: Sample,
    pub dictionary_names: Vec<String>,
}

pub fn load_dataset(config: &EstimateConfig) -> Result<Dataset, CliError> {
    let (headers, rows) = read_csv(Path::new(&config.input))?;

    let col_index = |name: &str| -> Result<usize, CliError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::data(format!("column '{name}' not found in input")))
    };

    let y_col = col_index(&config.outcome)?;
    let d_col = col_index(&config.treatment)?;
    if config.conditioning.is_empty() || config.conditioning.len() > 3 {
        return Err(CliError::config(
            "conditioning must list between 1 and 3 columns",
        ));
    }
    let mut cond_cols = Vec::new();
    for name in &config.conditioning {
        let c = col_index(name)?;
        if c == y_col || c == d_col {
            return Err(CliError::config(format!(
                "column '{name}' cannot be both conditioning and outcome/treatment"
            )));
        }
        cond_cols.push(c);
    }

    let covariate_cols: Vec<usize> = match &config.covariates {
        Covariates::Tag(AllRemaining::AllRemaining) => (0..headers.len())
            .filter(|c| *c != y_col && *c != d_col && !cond_cols.contains(c))
            .collect(),
        Covariates::List(names) => {
            let mut cols = Vec::new();
            for name in names {
                let c = col_index(name)?;
                if c == y_col || c == d_col || cond_cols.contains(&c) {
                    return Err(CliError::config(format!(
                        "column '{name}' is already used as outcome/treatment/conditioning"
                    )));
                }
                cols.push(c);
            }
            cols
        }
    };

    let n = rows.len();
    if n < 2 {
        return Err(CliError::data("input has fewer than 2 data rows"));
    }

    // Outcome and treatment.
    let y: Vec<f64> = rows.iter().map(|r| r[y_col]).collect();
    let mut d = Vec::with_capacity(n);
    for (i, r) in rows.iter().enumerate() {
        let v = r[d_col];
        if v == 0.0 {
            d.push(0u8);
        } else if v == 1.0 {
            d.push(1u8);
        } else {
            return Err(CliError::data(format!(
                "treatment column '{}' must be 0 or 1 (row {}, value {v})",
                config.treatment,
                i + 2
            )));
        }
    }

    // Conditioning variables must vary.
    for (&c, name) in cond_cols.iter().zip(&config.conditioning) {
        let col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        if var <= 0.0 {
            return Err(CliError::data(format!(
                "conditioning column '{name}' is constant"
            )));
        }
    }

    // Base dictionary: conditioning columns first, then covariates.
    let mut base_cols = cond_cols.clone();
    base_cols.extend(&covariate_cols);
    let mut names: Vec<String> = base_cols.iter().map(|&c| headers[c].clone()).collect();
    let mut dict_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| base_cols.iter().map(|&c| r[c]).collect())
        .collect();

    expand_dictionary(&mut dict_rows, &mut names, config.expansion)?;

    let x = Mat::from_rows(&dict_rows)
        .map_err(|e| CliError::data(format!("bad dictionary matrix: {e}")))?;
    let x1_cols: Vec<usize> = (0..cond_cols.len()).collect();
    let sample = Sample::new(y, d, x, x1_cols)
        .map_err(|e| CliError::data(format!("invalid sample: {e}")))?;

    Ok(Dataset {
        sample,
        dictionary_names: names,
    })
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::data(format!("cannot open '{}': {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::data(format!("cannot read header: {e}")))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty() {
        return Err(CliError::data("input has no columns"));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::data(format!("row {}: {e}", i + 2)))?;
        if record.len() != headers.len() {
            return Err(CliError::data(format!(
                "row {} has {} fields, expected {}",
                i + 2,
                record.len(),
                headers.len()
            )));
        }
        let mut row = Vec::with_capacity(headers.len());
        for (j, field) in record.iter().enumerate() {
            if field.is_empty() {
                return Err(CliError::data(format!(
                    "missing value at row {}, column '{}'",
                    i + 2,
                    headers[j]
                )));
            }
            let v: f64 = field.parse().map_err(|_| {
                CliError::data(format!(
                    "cannot parse '{}' at row {}, column '{}'",
                    field,
                    i + 2,
                    headers[j]
                ))
            })?;
            if !v.is_finite() {
                return Err(CliError::data(format!(
                    "non-finite value at row {}, column '{}'",
                    i + 2,
                    headers[j]
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    Ok((headers, rows))
}

fn is_binary(rows: &[Vec<f64>], col: usize) -> bool {
    rows.iter().all(|r| r[col] == 0.0 || r[col] == 1.0)
}

/// Appends expansion terms (squares, interactions, cubes) to the dictionary
/// in place. Pure powers of binary columns are skipped (they duplicate the
/// column itself).
fn expand_dictionary(
    rows: &mut [Vec<f64>],
    names: &mut Vec<String>,
    expansion: Expansion,
) -> Result<(), CliError> {
    let m = names.len();
    let degree = match expansion {
        Expansion::None => return Ok(()),
        Expansion::Squares => 2,
        Expansion::Interactions { degree } => {
            if !(2..=3).contains(&degree) {
                return Err(CliError::config("expansion degree must be 2 or 3"));
            }
            degree
        }
    };
    let binary: Vec<bool> = (0..m).map(|j| is_binary(rows, j)).collect();
    let interactions = matches!(expansion, Expansion::Interactions { .. });

    // Multisets of size 2..=degree over the base columns, in lexicographic
    // order; squares-only mode keeps just the (j, j) terms.
    let mut terms: Vec<Vec<usize>> = Vec::new();
    for (j, &is_bin) in binary.iter().enumerate() {
        if !is_bin {
            terms.push(vec![j, j]);
        }
    }
    if interactions {
        for a in 0..m {
            for bcol in a + 1..m {
                terms.push(vec![a, bcol]);
            }
        }
        if degree == 3 {
            let mut triples = Vec::new();
            for a in 0..m {
                for bcol in a..m {
                    for c in bcol..m {
                        // Skip any power >= 2 of a binary column.
                        let counts_binary_power =
                            (a == bcol && binary[a]) || (bcol == c && binary[bcol]);
                        if counts_binary_power {
                            continue;
                        }
                        triples.push(vec![a, bcol, c]);
                    }
                }
            }
            terms.extend(triples);
        }
    }

    for term in &terms {
        let mut name = String::new();
        let mut idx = 0;
        while idx < term.len() {
            let col = term[idx];
            let mut power = 1;
            while idx + 1 < term.len() && term[idx + 1] == col {
                power += 1;
                idx += 1;
            }
            if !name.is_empty() {
                name.push('*');
            }
            name.push_str(&names[col]);
            if power > 1 {
                name.push_str(&format!("^{power}"));
            }
            idx += 1;
        }
        names.push(name);
        for row in rows.iter_mut() {
            let v = term.iter().map(|&c| row[c]).product();
            row.push(v);
        }
    }
    Ok(())
}

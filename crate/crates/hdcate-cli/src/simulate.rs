//! The `simulate` subcommand: Monte Carlo experiments with checkpointing.

use std::fs;
use std::path::Path;

use hdcate::mc::{run as run_mc, McConfig};

use crate::CliError;

pub fn run(
    config_path: &Path,
    seed_override: Option<u64>,
    output_override: Option<&Path>,
) -> Result<(), CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| CliError::config(format!("cannot read config: {e}")))?;
    let mut config: McConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("cannot parse config: {e}")))?;
    if let Some(seed) = seed_override {
        config.root_seed = seed;
    }
    config
        .validate()
        .map_err(|e| CliError::config(format!("{e}")))?;

    let out_dir = output_override
        .map(|p| p.to_path_buf())
        .unwrap_or_else(|| std::path::PathBuf::from("."));
    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::config(format!("cannot create output directory: {e}")))?;
    let state_path = out_dir.join("mc_state.json");

    let mut progress = |done: usize, total: usize| {
        eprintln!("completed {done}/{total} replications");
    };
    let report = run_mc(&config, Some(&state_path), Some(&mut progress))
        .map_err(CliError::from_estimation)?;

    let json_path = out_dir.join("mc_report.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::numerical(format!("serialization failed: {e}")))?;
    fs::write(&json_path, json)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", json_path.display())))?;

    let table = report.to_string();
    let txt_path = out_dir.join("mc_report.txt");
    fs::write(&txt_path, &table)
        .map_err(|e| CliError::config(format!("cannot write {}: {e}", txt_path.display())))?;

    print!("{table}");
    println!(
        "wall time {:.1}s; wrote {} and {}",
        report.wall_time_secs,
        json_path.display(),
        txt_path.display()
    );
    Ok(())
}

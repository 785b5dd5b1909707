//! Batch runner for sum-rate experiments: reads a JSON experiment, sweeps the
//! closed-form MRC curves and the Monte Carlo engine over user drops, and
//! writes plot-ready CSV with a run manifest.

pub mod config;
pub mod output;
pub mod runner;

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

pub use config::{ExperimentConfig, Mode, Overrides};
pub use runner::{execute, CurveRow, Outcome, UserRow};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot parse configuration: {0}")]
    Parse(String),

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] hwmimo_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for bad input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use hwmimo_core::Error as E;
        match self {
            CliError::Parse(_) | CliError::Validation(_) => 2,
            CliError::Core(
                E::InvalidConfig(_)
                | E::Validation(_)
                | E::Unsupported(_)
                | E::Domain { .. }
                | E::Distance(_)
                | E::Index(_)
                | E::InsufficientTrials { .. },
            ) => 2,
            CliError::Core(_) | CliError::Io { .. } => 3,
        }
    }
}

/// Files written by [`run`].
#[derive(Clone, Debug)]
pub struct RunReport {
    pub curves: PathBuf,
    pub users: Option<PathBuf>,
    pub manifest: PathBuf,
    pub rows: Vec<CurveRow>,
}

pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    ExperimentConfig::from_json(&text).map_err(|e| match e {
        CliError::Parse(msg) => CliError::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Runs the experiment and writes its outputs into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport, CliError> {
    let start = Instant::now();
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|source| CliError::Io { path: out.into(), source })?;
    let outcome = execute(cfg)?;
    let csv_name = cfg.csv_name();
    let curves = output::write_curves(out, &csv_name, &outcome.rows, cfg.output.precision)?;
    let mut files = vec![csv_name.clone()];
    let users = if cfg.output.per_user {
        let stem = csv_name.strip_suffix(".csv").unwrap_or(&csv_name);
        let name = format!("{stem}_users.csv");
        files.push(name.clone());
        Some(output::write_users(out, &name, &outcome.users, cfg.output.precision)?)
    } else {
        None
    };
    let scenario_files = output::write_scenarios(out, &outcome.drops)?;
    let manifest = output::manifest(
        cfg,
        &outcome.drops,
        scenario_files,
        files,
        rayon::current_num_threads(),
        start.elapsed().as_secs_f64(),
    );
    let manifest_path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(hwmimo_core::Error::from)?;
    output::write_file(&manifest_path, text.as_bytes())?;
    Ok(RunReport { curves, users, manifest: manifest_path, rows: outcome.rows })
}

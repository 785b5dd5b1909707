//! CSV tables, per-drop scenario documents and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use hwmimo_core::scenario::{round_significant, ScenarioDocument};

use crate::config::ExperimentConfig;
use crate::runner::{CurveRow, DropRecord, UserRow};
use crate::CliError;

pub const CURVE_HEADER: [&str; 8] = [
    "N",
    "pilot_kind",
    "filter",
    "hw_mode",
    "sum_rate_closed_form",
    "sum_rate_limit",
    "sum_rate_mc",
    "mc_stderr",
];

pub const USER_HEADER: [&str; 9] =
    ["drop", "N", "pilot_kind", "filter", "hw_mode", "cell", "user", "rate_closed_form", "rate_mc"];

/// Shortest decimal that round-trips the value rounded to `precision`
/// significant digits; `inf` for infinity and an empty cell for no value.
pub fn format_number(x: Option<f64>, precision: usize) -> String {
    match x {
        None => String::new(),
        Some(v) if v.is_nan() => "nan".into(),
        Some(v) if v == f64::INFINITY => "inf".into(),
        Some(v) if v == f64::NEG_INFINITY => "-inf".into(),
        Some(v) => format!("{}", round_significant(v, precision)),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Io { path: path.to_path_buf(), source: e.into() }
}

pub fn curve_csv(rows: &[CurveRow], precision: usize) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CURVE_HEADER)?;
    for r in rows {
        w.write_record([
            r.antennas.to_string(),
            r.pilot_kind.to_string(),
            r.filter.to_string(),
            r.hw_mode.clone(),
            format_number(r.sum_rate_closed_form, precision),
            format_number(r.sum_rate_limit, precision),
            format_number(r.sum_rate_mc, precision),
            format_number(r.mc_stderr, precision),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn user_csv(rows: &[UserRow], precision: usize) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(USER_HEADER)?;
    for r in rows {
        w.write_record([
            r.drop.to_string(),
            r.antennas.to_string(),
            r.pilot_kind.to_string(),
            r.filter.to_string(),
            r.hw_mode.clone(),
            r.cell.to_string(),
            r.user.to_string(),
            format_number(r.rate_closed_form, precision),
            format_number(r.rate_mc, precision),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(io_err(path))
}

#[derive(Debug, Serialize)]
struct DropEntry {
    index: usize,
    seed: u64,
    scenarios: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub name: &'a str,
    pub version: &'a str,
    pub master_seed: u64,
    pub threads: usize,
    pub wall_time_s: f64,
    pub files: Vec<String>,
    drops: Vec<DropEntry>,
    pub config: &'a ExperimentConfig,
}

/// Writes one scenario document per drop and pilot kind under
/// `scenarios/`, returning the relative paths per drop.
pub fn write_scenarios(out: &Path, drops: &[DropRecord]) -> Result<Vec<Vec<String>>, CliError> {
    let dir = out.join("scenarios");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut all = Vec::new();
    for d in drops {
        let mut names = Vec::new();
        for s in &d.scenarios {
            let name = format!("scenarios/drop{:03}_{}.json", d.index, s.params.pilot_kind);
            let path = out.join(&name);
            let text = ScenarioDocument::from_scenario(s).to_json()?;
            write_file(&path, text.as_bytes())?;
            names.push(name);
        }
        all.push(names);
    }
    Ok(all)
}

pub fn manifest<'a>(
    cfg: &'a ExperimentConfig,
    drops: &[DropRecord],
    scenario_files: Vec<Vec<String>>,
    files: Vec<String>,
    threads: usize,
    wall_time_s: f64,
) -> Manifest<'a> {
    Manifest {
        name: &cfg.name,
        version: env!("CARGO_PKG_VERSION"),
        master_seed: cfg.scenario.seed,
        threads,
        wall_time_s,
        files,
        drops: drops
            .iter()
            .zip(scenario_files)
            .map(|(d, scenarios)| DropEntry { index: d.index, seed: d.seed, scenarios })
            .collect(),
        config: cfg,
    }
}

pub fn write_curves(out: &Path, name: &str, rows: &[CurveRow], precision: usize) -> Result<PathBuf, CliError> {
    let path = out.join(name);
    let bytes = curve_csv(rows, precision).map_err(csv_err(&path))?;
    write_file(&path, &bytes)?;
    Ok(path)
}

pub fn write_users(out: &Path, name: &str, rows: &[UserRow], precision: usize) -> Result<PathBuf, CliError> {
    let path = out.join(name);
    let bytes = user_csv(rows, precision).map_err(csv_err(&path))?;
    write_file(&path, &bytes)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formatting() {
        assert_eq!(format_number(None, 6), "");
        assert_eq!(format_number(Some(f64::INFINITY), 6), "inf");
        assert_eq!(format_number(Some(0.1 + 0.2), 17), "0.30000000000000004");
        assert_eq!(format_number(Some(0.1 + 0.2), 12), "0.3");
        assert_eq!(format_number(Some(123456.789), 4), "123500");
        assert_eq!(format_number(Some(-2.5e-7), 3), "-0.00000025");
        assert_eq!(format_number(Some(0.0), 3), "0");
    }
}

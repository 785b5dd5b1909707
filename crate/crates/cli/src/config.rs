//! Experiment description read from JSON.

use serde::{Deserialize, Serialize};

use hwmimo_core::montecarlo::engine::{HardwareSpec, TSampling};
use hwmimo_core::montecarlo::{DistortionMoment, FilterKind};
use hwmimo_core::scenario::{Layout, ScenarioParams, ShadowReading};
use hwmimo_core::{HardwareProfile, PilotKind, ScalingExponents};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Closed-form MRC curves only.
    Closed,
    /// Monte Carlo only.
    Mc,
    #[default]
    Both,
}

impl Mode {
    pub fn closed(self) -> bool {
        self != Mode::Mc
    }

    pub fn mc(self) -> bool {
        self != Mode::Closed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub scenario: ScenarioBlock,
    pub hardware: Vec<HardwareEntry>,
    pub sweep: SweepBlock,
    #[serde(default)]
    pub mc: McBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub mode: Mode,
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioBlock {
    pub seed: u64,
    /// Independent user drops the sum rates are averaged over.
    pub drops: usize,
    /// Cells per side of the square grid.
    pub grid: usize,
    pub cell_side: f64,
    pub min_distance: f64,
    /// Users per cell, one per sector.
    pub users: usize,
    pub pilot_len: usize,
    pub coherence: usize,
    pub power_dbm_per_hz: f64,
    pub noise_dbm_per_hz: f64,
    pub shadow: ShadowReading,
}

impl Default for ScenarioBlock {
    fn default() -> Self {
        let p = ScenarioParams::default();
        Self {
            seed: 0,
            drops: 1,
            grid: p.layout.grid,
            cell_side: p.layout.cell_side,
            min_distance: p.layout.min_distance,
            users: p.layout.sectors,
            pilot_len: p.pilot_len,
            coherence: p.coherence,
            power_dbm_per_hz: p.power_dbm_per_hz,
            noise_dbm_per_hz: p.noise_dbm_per_hz,
            shadow: p.shadow,
        }
    }
}

impl ScenarioBlock {
    pub fn params(&self, seed: u64, pilot_kind: PilotKind) -> ScenarioParams {
        ScenarioParams {
            seed,
            layout: Layout {
                grid: self.grid,
                cell_side: self.cell_side,
                min_distance: self.min_distance,
                sectors: self.users,
            },
            antennas: 1,
            pilot_len: self.pilot_len,
            coherence: self.coherence,
            pilot_kind,
            shadow: self.shadow,
            power_dbm_per_hz: self.power_dbm_per_hz,
            noise_dbm_per_hz: self.noise_dbm_per_hz,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedBlock {
    pub delta: f64,
    pub kappa: f64,
    pub xi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledBlock {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub kappa0: f64,
    pub xi0: f64,
    pub delta0: f64,
}

/// One hardware curve; exactly one of `fixed` and `scaled` is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareEntry {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<FixedBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaled: Option<ScaledBlock>,
}

impl HardwareEntry {
    pub fn spec(&self) -> Result<HardwareSpec, CliError> {
        let at = |e: hwmimo_core::Error| CliError::Validation(format!("hardware `{}`: {e}", self.label));
        match (self.fixed, self.scaled) {
            (Some(f), None) => Ok(HardwareSpec::Fixed(HardwareProfile::new(f.delta, f.kappa, f.xi).map_err(at)?)),
            (None, Some(s)) => Ok(HardwareSpec::Scaled(
                ScalingExponents::new(s.tau1, s.tau2, s.tau3, s.kappa0, s.xi0, s.delta0).map_err(at)?,
            )),
            _ => Err(CliError::Validation(format!(
                "hardware `{}`: give exactly one of `fixed` and `scaled`",
                self.label
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub antennas: Vec<usize>,
    #[serde(default = "default_kinds")]
    pub pilot_kinds: Vec<PilotKind>,
    /// Filters simulated by Monte Carlo. Closed forms exist for MRC only.
    #[serde(default = "default_filters")]
    pub filters: Vec<FilterKind>,
}

fn default_kinds() -> Vec<PilotKind> {
    vec![PilotKind::SpatialDft]
}

fn default_filters() -> Vec<FilterKind> {
    vec![FilterKind::Mrc]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McBlock {
    pub trials: usize,
    pub batches: usize,
    pub t_sampling: TSampling,
    pub distortion: DistortionMoment,
    /// Largest array size accepted for Monte Carlo.
    pub max_antennas: usize,
}

impl Default for McBlock {
    fn default() -> Self {
        Self {
            trials: 100_000,
            batches: 16,
            t_sampling: TSampling::Stride(25),
            distortion: DistortionMoment::Conditional,
            max_antennas: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    /// File name inside the output directory; `<name>.csv` when absent.
    pub csv: Option<String>,
    /// Significant digits written.
    pub precision: usize,
    /// Also write per-user rates to `<stem>_users.csv`.
    pub per_user: bool,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { csv: None, precision: 12, per_user: false }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub mode: Option<Mode>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.scenario.seed = s;
        }
        if let Some(t) = o.trials {
            self.mc.trials = t;
        }
        if let Some(m) = o.mode {
            self.mode = m;
        }
    }

    pub fn csv_name(&self) -> String {
        self.output.csv.clone().unwrap_or_else(|| format!("{}.csv", self.name))
    }

    /// Hardware specs in file order.
    pub fn validate(&self) -> Result<Vec<HardwareSpec>, CliError> {
        let mut bad = Vec::new();
        let n = &self.sweep.antennas;
        if n.is_empty() {
            bad.push("sweep.antennas is empty".to_string());
        } else if n[0] == 0 || n.windows(2).any(|w| w[0] >= w[1]) {
            bad.push("sweep.antennas must be positive and strictly ascending".into());
        }
        if self.sweep.pilot_kinds.is_empty() {
            bad.push("sweep.pilot_kinds is empty".into());
        }
        if let Some(k) = self.sweep.pilot_kinds.iter().find(|k| **k == PilotKind::Custom) {
            bad.push(format!("pilot kind `{k}` cannot be generated for a scenario"));
        }
        if self.hardware.is_empty() {
            bad.push("hardware is empty".into());
        }
        let mut labels: Vec<&str> = self.hardware.iter().map(|h| h.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            bad.push("hardware labels must be unique".into());
        }
        if self.scenario.drops == 0 {
            bad.push("scenario.drops must be at least 1".into());
        }
        if self.output.precision == 0 || self.output.precision > 17 {
            bad.push(format!("output.precision must lie in 1..=17, got {}", self.output.precision));
        }
        if let Some(csv) = &self.output.csv {
            if csv.is_empty() || csv.contains(['/', '\\']) {
                bad.push(format!("output.csv must be a plain file name, got `{csv}`"));
            }
        }
        if self.mode.mc() {
            if self.sweep.filters.is_empty() {
                bad.push("sweep.filters is empty".into());
            }
            if self.mc.trials < 2 {
                bad.push(format!("mc.trials must be at least 2, got {}", self.mc.trials));
            }
            if self.mc.batches < 2 || self.mc.batches > self.mc.trials {
                bad.push(format!("mc.batches must lie in 2..=mc.trials, got {}", self.mc.batches));
            }
            if let Some(&big) = n.iter().find(|&&v| v > self.mc.max_antennas) {
                bad.push(format!(
                    "Monte Carlo with N = {big} exceeds mc.max_antennas = {}; use --mode closed for large arrays",
                    self.mc.max_antennas
                ));
            }
        }
        let mut specs = Vec::new();
        for h in &self.hardware {
            match h.spec() {
                Ok(s) => specs.push(s),
                Err(e) => bad.push(e.to_string()),
            }
        }
        if bad.is_empty() {
            Ok(specs)
        } else {
            Err(CliError::Validation(bad.join("; ")))
        }
    }
}

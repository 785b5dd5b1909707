//! Square-cell wrap-around network: sectorized user drops, distance-dependent
//! pathloss with log-normal shadowing, and sector-indexed pilot reuse.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_pilot_book, Dimensions, NetworkStats, PilotBook, PilotKind};
use crate::rng::{stream_rng, Domain};

pub type Point = [f64; 2];

/// Euclidean distance on a square torus of side `world_side`.
pub fn wrap_distance(a: Point, b: Point, world_side: f64) -> f64 {
    let axis = |u: f64, v: f64| {
        let d = (u - v).abs();
        d.min(world_side - d)
    };
    axis(a[0], b[0]).hypot(axis(a[1], b[1]))
}

/// How the shadowing parameter 0.25 is read.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShadowReading {
    #[default]
    Variance,
    StdDev,
}

impl ShadowReading {
    pub fn std_dev(&self) -> f64 {
        match self {
            ShadowReading::Variance => 0.25f64.sqrt(),
            ShadowReading::StdDev => 0.25,
        }
    }
}

/// `lambda = 10^(s - 1.53) / d^3.76` with `d` in meters.
pub fn pathloss(d: f64, shadow: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Distance(d));
    }
    Ok(10f64.powf(shadow - 1.53) / d.powf(3.76))
}

/// Geometry of the grid and the drop rules.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    /// Cells per side of the square grid.
    pub grid: usize,
    pub cell_side: f64,
    pub min_distance: f64,
    /// Equal angular sectors per cell, one user each.
    pub sectors: usize,
}

impl Default for Layout {
    fn default() -> Self {
        Self { grid: 4, cell_side: 250.0, min_distance: 35.0, sectors: 8 }
    }
}

impl Layout {
    pub fn cells(&self) -> usize {
        self.grid * self.grid
    }

    pub fn world_side(&self) -> f64 {
        self.grid as f64 * self.cell_side
    }

    /// BS at the center of cell `l`, cells numbered row by row.
    pub fn bs_position(&self, l: usize) -> Point {
        let (row, col) = (l / self.grid, l % self.grid);
        [(col as f64 + 0.5) * self.cell_side, (row as f64 + 0.5) * self.cell_side]
    }

    /// Sector of a position relative to its BS: angle in `[0, 2 pi)` divided
    /// into equal parts.
    pub fn sector_of(&self, offset: Point) -> usize {
        let angle = offset[1].atan2(offset[0]).rem_euclid(2.0 * PI);
        ((angle / (2.0 * PI / self.sectors as f64)) as usize).min(self.sectors - 1)
    }

    fn check(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.grid == 0 || self.sectors == 0 {
            bad.push("grid and sector counts must be positive".to_string());
        }
        if !(self.cell_side > 0.0) {
            bad.push(format!("cell side must be positive, got {}", self.cell_side));
        }
        if !(self.min_distance >= 0.0 && self.min_distance < 0.5 * self.cell_side) {
            bad.push(format!("minimum distance {} must lie in [0, cell_side / 2)", self.min_distance));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

/// BS and user positions of one drop. User `u = l * K + k` lies in sector
/// `k` of cell `l`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub layout: Layout,
    pub bs_positions: Vec<Point>,
    pub ue_positions: Vec<Point>,
    pub sectors: Vec<usize>,
}

/// One user uniformly in every sector of every cell, at least
/// `min_distance` from the serving BS.
pub fn drop_users(layout: &Layout, seed: u64) -> Result<Topology> {
    layout.check()?;
    let half = 0.5 * layout.cell_side;
    let per_cell: Vec<Vec<Point>> = (0..layout.cells())
        .into_par_iter()
        .map(|l| {
            let mut rng = stream_rng(seed, Domain::Drop, &[l as u64]);
            let bs = layout.bs_position(l);
            (0..layout.sectors)
                .map(|k| loop {
                    let off = [rng.random_range(-half..half), rng.random_range(-half..half)];
                    if off[0].hypot(off[1]) >= layout.min_distance && layout.sector_of(off) == k {
                        break [bs[0] + off[0], bs[1] + off[1]];
                    }
                })
                .collect()
        })
        .collect();
    Ok(Topology {
        layout: *layout,
        bs_positions: (0..layout.cells()).map(|l| layout.bs_position(l)).collect(),
        ue_positions: per_cell.into_iter().flatten().collect(),
        sectors: (0..layout.cells()).flat_map(|_| 0..layout.sectors).collect(),
    })
}

/// Everything needed to regenerate one drop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub seed: u64,
    pub layout: Layout,
    pub antennas: usize,
    pub pilot_len: usize,
    pub coherence: usize,
    pub pilot_kind: PilotKind,
    #[serde(default)]
    pub shadow: ShadowReading,
    pub power_dbm_per_hz: f64,
    pub noise_dbm_per_hz: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            seed: 0,
            layout: Layout::default(),
            antennas: 100,
            pilot_len: 8,
            coherence: 500,
            pilot_kind: PilotKind::SpatialDft,
            shadow: ShadowReading::Variance,
            power_dbm_per_hz: -47.0,
            noise_dbm_per_hz: -174.0,
        }
    }
}

impl ScenarioParams {
    pub fn dims(&self) -> Result<Dimensions> {
        Dimensions::new(self.layout.cells(), self.layout.sectors, self.antennas, self.pilot_len, self.coherence)
    }

    /// Transmit power over noise power, linear.
    pub fn snr_scale(&self) -> f64 {
        10f64.powf((self.power_dbm_per_hz - self.noise_dbm_per_hz) / 10.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub params: ScenarioParams,
    /// Normalized to unit noise variance.
    pub stats: NetworkStats,
    pub book: PilotBook,
    pub topology: Topology,
}

/// Drops users, draws shadowing for every (BS, user) link and builds the
/// pilot book.
pub fn build_scenario(params: &ScenarioParams) -> Result<Scenario> {
    let dims = params.dims()?;
    let topology = drop_users(&params.layout, params.seed)?;
    let world = params.layout.world_side();
    let sd = params.shadow.std_dev();
    let mut rng = stream_rng(params.seed, Domain::Shadow, &[]);
    let mut lambda = Vec::with_capacity(dims.cells * dims.total_users());
    for bs in &topology.bs_positions {
        for ue in &topology.ue_positions {
            let s: f64 = rng.sample::<f64, _>(StandardNormal) * sd;
            lambda.push(pathloss(wrap_distance(*bs, *ue, world), s)?);
        }
    }
    let power = vec![params.snr_scale(); dims.total_users()];
    let book = build_pilot_book(params.pilot_kind, &dims, &power)?;
    let stats = NetworkStats { dims, lambda, power, sigma2: 1.0 };
    Ok(Scenario { params: params.clone(), stats, book, topology })
}

/// Serialized drop. Attenuations are rounded to 15 significant digits; the
/// exact tensor is recovered by regenerating from the parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDocument {
    pub params: ScenarioParams,
    pub bs_positions: Vec<Point>,
    pub ue_positions: Vec<Point>,
    pub sectors: Vec<usize>,
    /// Row-major `[j][l][k]`.
    pub lambda: Vec<f64>,
}

pub fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits.saturating_sub(1), x).parse().unwrap_or(x)
}

impl ScenarioDocument {
    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            params: s.params.clone(),
            bs_positions: s.topology.bs_positions.clone(),
            ue_positions: s.topology.ue_positions.clone(),
            sectors: s.topology.sectors.clone(),
            lambda: s.stats.lambda.iter().map(|&x| round_significant(x, 15)).collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn regenerate(&self) -> Result<Scenario> {
        build_scenario(&self.params)
    }
}

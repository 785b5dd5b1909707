//! Drop loop: closed-form curves and Monte Carlo runs for every pilot kind.

use hwmimo_core::estimation::EstimatorContext;
use hwmimo_core::montecarlo::engine::{self, EnginePlan, HardwareSpec};
use hwmimo_core::montecarlo::FilterKind;
use hwmimo_core::rates::NetworkCurves;
use hwmimo_core::rng::{derive_seed, Domain};
use hwmimo_core::scenario::{build_scenario, Scenario};
use hwmimo_core::stats::compensated_sum;
use hwmimo_core::{validate, HardwareProfile, PilotKind, SystemConfig};

use crate::config::ExperimentConfig;
use crate::CliError;

/// One CSV row, averaged over drops.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRow {
    pub antennas: usize,
    pub pilot_kind: PilotKind,
    pub filter: FilterKind,
    pub hw_mode: String,
    pub sum_rate_closed_form: Option<f64>,
    pub sum_rate_limit: Option<f64>,
    pub sum_rate_mc: Option<f64>,
    pub mc_stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserRow {
    pub drop: usize,
    pub antennas: usize,
    pub pilot_kind: PilotKind,
    pub filter: FilterKind,
    pub hw_mode: String,
    pub cell: usize,
    pub user: usize,
    pub rate_closed_form: Option<f64>,
    pub rate_mc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct DropRecord {
    pub index: usize,
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub rows: Vec<CurveRow>,
    pub users: Vec<UserRow>,
    pub drops: Vec<DropRecord>,
}

/// Seed of drop `d`.
pub fn drop_seed(master: u64, d: usize) -> u64 {
    derive_seed(master, Domain::Experiment, &[d as u64])
}

/// Sums over drops of one curve point.
#[derive(Clone, Debug, Default)]
struct Tally {
    closed: Option<f64>,
    limit: Option<f64>,
    mc: Option<f64>,
    mc_var: f64,
}

fn add(slot: &mut Option<f64>, v: f64) {
    *slot = Some(slot.unwrap_or(0.0) + v);
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let specs = cfg.validate()?;
    let filters: Vec<FilterKind> = if cfg.mode.mc() { cfg.sweep.filters.clone() } else { Vec::new() };
    let mut row_filters = filters.clone();
    if cfg.mode.closed() && !row_filters.contains(&FilterKind::Mrc) {
        row_filters.insert(0, FilterKind::Mrc);
    }
    let ns = &cfg.sweep.antennas;
    let index = |k: usize, h: usize, n: usize, f: usize| ((k * specs.len() + h) * ns.len() + n) * row_filters.len() + f;
    let mut tallies = vec![Tally::default(); cfg.sweep.pilot_kinds.len() * specs.len() * ns.len() * row_filters.len()];
    let mrc_ix = row_filters.iter().position(|f| *f == FilterKind::Mrc);
    let mut users = Vec::new();
    let mut drops = Vec::new();

    for d in 0..cfg.scenario.drops {
        let seed = drop_seed(cfg.scenario.seed, d);
        let mut scenarios = Vec::new();
        for (k, &kind) in cfg.sweep.pilot_kinds.iter().enumerate() {
            let scenario = build_scenario(&cfg.scenario.params(seed, kind))?;
            let base = validate(&scenario.stats, &scenario.book, &HardwareProfile::ideal())?;
            let mut closed_users: Vec<Vec<Vec<f64>>> = Vec::new();
            if cfg.mode.closed() {
                for (h, spec) in specs.iter().enumerate() {
                    let fixed = match spec {
                        HardwareSpec::Fixed(hw) => Some(curves_for(&base, *hw)?),
                        HardwareSpec::Scaled(_) => None,
                    };
                    let mut per_n = Vec::new();
                    for (ni, &n) in ns.iter().enumerate() {
                        let scaled;
                        let curves = match &fixed {
                            Some(c) => c,
                            None => {
                                scaled = curves_for(&base, spec.profile_at(n)?)?;
                                &scaled
                            }
                        };
                        let rates = curves.user_rates(n as f64);
                        let t = &mut tallies[index(k, h, ni, mrc_ix.unwrap_or(0))];
                        add(&mut t.closed, compensated_sum(rates.iter().copied()));
                        add(&mut t.limit, curves.limit_sum_rate());
                        per_n.push(rates);
                    }
                    closed_users.push(per_n);
                }
            }
            let mut mc_users: Vec<Vec<Vec<Vec<f64>>>> = Vec::new();
            if cfg.mode.mc() {
                let plan = EnginePlan {
                    trials: cfg.mc.trials,
                    batches: cfg.mc.batches,
                    seed,
                    antennas: ns.clone(),
                    hardware: specs.clone(),
                    filters: filters.clone(),
                    t_sampling: cfg.mc.t_sampling.clone(),
                    distortion: cfg.mc.distortion,
                    per_pair: false,
                    stations: None,
                };
                let out = engine::run(&base, &plan)?;
                mc_users = vec![vec![vec![Vec::new(); filters.len()]; ns.len()]; specs.len()];
                for p in &out.points {
                    let ni = ns.iter().position(|&n| n == p.antennas).unwrap_or(0);
                    let fi = filters.iter().position(|&f| f == p.filter).unwrap_or(0);
                    let ri = row_filters.iter().position(|&f| f == p.filter).unwrap_or(0);
                    let t = &mut tallies[index(k, p.hardware, ni, ri)];
                    add(&mut t.mc, p.sum_rate);
                    t.mc_var += p.sum_rate_se * p.sum_rate_se;
                    mc_users[p.hardware][ni][fi] = p.users.iter().map(|u| u.rate).collect();
                }
            }
            if cfg.output.per_user {
                let n_users = base.stats.dims.users;
                for (h, entry) in cfg.hardware.iter().enumerate() {
                    for (ni, &n) in ns.iter().enumerate() {
                        for &f in &row_filters {
                            let closed = (f == FilterKind::Mrc && cfg.mode.closed()).then(|| &closed_users[h][ni]);
                            let mc = filters.iter().position(|&g| g == f).map(|fi| &mc_users[h][ni][fi]);
                            for u in 0..base.stats.dims.total_users() {
                                users.push(UserRow {
                                    drop: d,
                                    antennas: n,
                                    pilot_kind: kind,
                                    filter: f,
                                    hw_mode: entry.label.clone(),
                                    cell: u / n_users,
                                    user: u % n_users,
                                    rate_closed_form: closed.map(|r| r[u]),
                                    rate_mc: mc.map(|r| r[u]),
                                });
                            }
                        }
                    }
                }
            }
            scenarios.push(scenario);
        }
        drops.push(DropRecord { index: d, seed, scenarios });
    }

    let count = cfg.scenario.drops as f64;
    let mut rows = Vec::new();
    for (k, &kind) in cfg.sweep.pilot_kinds.iter().enumerate() {
        for (h, entry) in cfg.hardware.iter().enumerate() {
            for (ni, &n) in ns.iter().enumerate() {
                for (fi, &f) in row_filters.iter().enumerate() {
                    let t = &tallies[index(k, h, ni, fi)];
                    rows.push(CurveRow {
                        antennas: n,
                        pilot_kind: kind,
                        filter: f,
                        hw_mode: entry.label.clone(),
                        sum_rate_closed_form: t.closed.map(|v| v / count),
                        sum_rate_limit: t.limit.map(|v| v / count),
                        sum_rate_mc: t.mc.map(|v| v / count),
                        mc_stderr: t.mc.map(|_| t.mc_var.sqrt() / count),
                    });
                }
            }
        }
    }
    Ok(Outcome { rows, users, drops })
}

fn curves_for(base: &SystemConfig, hw: HardwareProfile) -> Result<NetworkCurves, CliError> {
    Ok(NetworkCurves::new(&EstimatorContext::new(&base.with_hardware(hw)?)?)?)
}

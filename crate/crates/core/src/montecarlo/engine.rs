//! Fast Monte Carlo for whole networks.
//!
//! At BS `j` every channel estimate is a combination of the `B` received
//! pilot vectors, `hhat_u = Y a_u`, and so is every filter:
//! `v = diag(w) Y b`. MRC has `w = 1`, `b = a_target`. For the approximate
//! MMSE filter the matrix `diag(d) + Y M Yᴴ` with `M = sum_u p_u a_u a_uᴴ`
//! is inverted through the Woodbury identity, giving `w = 1 / d` and
//! `b = (I + M Yᴴ diag(w) Y)^{-1} a_target`, a `B x B` solve.
//!
//! The inner products with all channels then come from one product
//! `Z = G H` with `G[i][n] = conj(Y[n][i]) w_n exp(i phi_n(t))`, and
//! `vᴴ h_u(t) = sum_i conj(b_i) Z[i][u]`.
//!
//! Channels, noise and phase paths are drawn once per (BS, trial) at the
//! largest array size and shared by every hardware profile and array size.
//! Smaller arrays use the leading antennas.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{interpolated_rate, DistortionMoment, EmpiricalMoments, FilterKind, TargetAccumulator};
use crate::error::{Error, Result};
use crate::estimation::EstimatorContext;
use crate::linalg::{gemm, CMat, Lu, Strided, C64};
use crate::model::{HardwareProfile, ScalingExponents, SystemConfig};
use crate::rates::apply_scaling;
use crate::rng::{fast_rng, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HardwareSpec {
    Fixed(HardwareProfile),
    /// Profile recomputed for every array size.
    Scaled(ScalingExponents),
}

impl HardwareSpec {
    pub fn profile_at(&self, n: usize) -> Result<HardwareProfile> {
        match self {
            HardwareSpec::Fixed(hw) => Ok(*hw),
            HardwareSpec::Scaled(exp) => apply_scaling(exp, n as f64),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TSampling {
    /// `B + 1`, `B + 1 + s`, ... and always `T`.
    Stride(usize),
    Explicit(Vec<usize>),
    All,
}

impl TSampling {
    pub fn resolve(&self, pilot_len: usize, coherence: usize) -> Result<Vec<usize>> {
        let first = pilot_len + 1;
        if first > coherence {
            return Err(Error::InvalidConfig(format!("no data channel uses with B = {pilot_len}, T = {coherence}")));
        }
        let mut out: Vec<usize> = match self {
            TSampling::Stride(0) => return Err(Error::InvalidConfig("t stride must be positive".into())),
            TSampling::Stride(s) => (first..=coherence).step_by(*s).chain(std::iter::once(coherence)).collect(),
            TSampling::Explicit(ts) => {
                if let Some(&t) = ts.iter().find(|&&t| t < first || t > coherence) {
                    return Err(Error::Domain { t, min: first, max: coherence });
                }
                ts.clone()
            }
            TSampling::All => (first..=coherence).collect(),
        };
        out.sort_unstable();
        out.dedup();
        if out.is_empty() {
            return Err(Error::InvalidConfig("no channel uses to sample".into()));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnginePlan {
    pub trials: usize,
    /// Independent trial groups; also the jackknife units of the standard
    /// error.
    pub batches: usize,
    pub seed: u64,
    /// Ascending array sizes.
    pub antennas: Vec<usize>,
    pub hardware: Vec<HardwareSpec>,
    pub filters: Vec<FilterKind>,
    pub t_sampling: TSampling,
    pub distortion: DistortionMoment,
    /// Keep `E{|vᴴ h_u|^2}` for every interferer.
    pub per_pair: bool,
    /// Receiving BSs to simulate; all when `None`.
    pub stations: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserResult {
    pub cell: usize,
    pub user: usize,
    /// At each sampled channel use.
    pub sinr: Vec<f64>,
    pub rate: f64,
    pub moments: Vec<EmpiricalMoments>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Index into `EnginePlan::hardware`.
    pub hardware: usize,
    pub profile: HardwareProfile,
    pub antennas: usize,
    pub filter: FilterKind,
    pub sum_rate: f64,
    /// Delete-one-batch jackknife.
    pub sum_rate_se: f64,
    pub users: Vec<UserResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EngineOutput {
    pub t_samples: Vec<usize>,
    pub points: Vec<CurvePoint>,
}

struct TPrep {
    /// `a_u` for every user, `B` entries each.
    a: Vec<C64>,
    m: CMat,
    /// `sum_u p_u c_u`.
    spc: f64,
}

/// One hardware profile evaluated at one or more array sizes.
struct Instance {
    hw: HardwareProfile,
    sizes: Vec<usize>,
    /// Per station, per sampled channel use.
    prep: Vec<Vec<TPrep>>,
    /// Without drift the SINR does not depend on `t`.
    t_evals: usize,
    /// Output point of `(size index, filter index)`.
    point: Vec<Vec<usize>>,
}

struct Layout<'a> {
    cfg: &'a SystemConfig,
    plan: &'a EnginePlan,
    stations: Vec<usize>,
    t_samples: Vec<usize>,
    n_max: usize,
    instances: Vec<Instance>,
    /// `(spec, profile, N, filter)` of every output point.
    points: Vec<(usize, HardwareProfile, usize, FilterKind)>,
}

/// Runs the plan on a validated configuration. The configuration's own
/// hardware profile and array size are ignored.
pub fn run(cfg: &SystemConfig, plan: &EnginePlan) -> Result<EngineOutput> {
    let layout = Layout::new(cfg, plan)?;
    let items: Vec<(usize, usize)> =
        (0..layout.stations.len()).flat_map(|s| (0..plan.batches).map(move |b| (s, b))).collect();
    let partial: Vec<Vec<TargetAccumulator>> = items.par_iter().map(|&(s, b)| layout.run_item(s, b)).collect();
    Ok(layout.assemble(&partial))
}

impl<'a> Layout<'a> {
    fn new(cfg: &'a SystemConfig, plan: &'a EnginePlan) -> Result<Self> {
        let d = cfg.stats.dims;
        let mut bad = Vec::new();
        if plan.trials < 2 {
            return Err(Error::InsufficientTrials { required: 2, got: plan.trials });
        }
        if plan.batches < 2 || plan.batches > plan.trials {
            bad.push(format!("batch count {} must lie in 2..={}", plan.batches, plan.trials));
        }
        if plan.antennas.is_empty() || plan.antennas[0] == 0 || plan.antennas.windows(2).any(|w| w[0] >= w[1]) {
            bad.push("array sizes must be positive and strictly ascending".into());
        }
        if plan.hardware.is_empty() || plan.filters.is_empty() {
            bad.push("at least one hardware profile and one filter are required".into());
        }
        let stations = plan.stations.clone().unwrap_or_else(|| (0..d.cells).collect());
        if stations.is_empty() || stations.iter().any(|&j| j >= d.cells) {
            bad.push(format!("stations must be nonempty and below {}", d.cells));
        }
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        let t_samples = plan.t_sampling.resolve(d.pilot_len, d.coherence)?;
        let n_max = *plan.antennas.last().unwrap_or(&1);

        let mut instances = Vec::new();
        let mut points = Vec::new();
        for (spec_ix, spec) in plan.hardware.iter().enumerate() {
            let groups: Vec<Vec<usize>> = match spec {
                HardwareSpec::Fixed(_) => vec![plan.antennas.clone()],
                HardwareSpec::Scaled(_) => plan.antennas.iter().map(|&n| vec![n]).collect(),
            };
            for sizes in groups {
                let hw = spec.profile_at(sizes[0])?;
                let scoped = cfg.with_hardware(hw)?;
                let ctx = EstimatorContext::new(&scoped)?;
                let prep = stations
                    .iter()
                    .map(|&j| t_samples.iter().map(|&t| prepare(&ctx, j, t)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                let mut point = Vec::new();
                for &n in &sizes {
                    let mut row = Vec::new();
                    for &f in &plan.filters {
                        row.push(points.len());
                        points.push((spec_ix, hw, n, f));
                    }
                    point.push(row);
                }
                let t_evals = if hw.delta == 0.0 { 1 } else { t_samples.len() };
                instances.push(Instance { hw, sizes, prep, t_evals, point });
            }
        }
        // Output order: hardware spec, then array size, then filter.
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by_key(|&p| (points[p].0, points[p].2, plan.filters.iter().position(|f| *f == points[p].3)));
        let mut rank = vec![0; points.len()];
        for (r, &p) in order.iter().enumerate() {
            rank[p] = r;
        }
        for inst in &mut instances {
            for row in &mut inst.point {
                for p in row.iter_mut() {
                    *p = rank[*p];
                }
            }
        }
        let points = order.iter().map(|&p| points[p]).collect();
        Ok(Self { cfg, plan, stations, t_samples, n_max, instances, points })
    }

    fn slot(&self, point: usize, s: usize, k: usize) -> usize {
        (point * self.t_samples.len() + s) * self.cfg.stats.dims.users + k
    }

    fn run_item(&self, station: usize, batch: usize) -> Vec<TargetAccumulator> {
        let d = self.cfg.stats.dims;
        let users = d.total_users();
        let proto = if self.plan.per_pair { TargetAccumulator::with_pairs(users) } else { TargetAccumulator::default() };
        let mut acc = vec![proto; self.points.len() * self.t_samples.len() * d.users];
        let (lo, hi) = (batch * self.plan.trials / self.plan.batches, (batch + 1) * self.plan.trials / self.plan.batches);
        let j = self.stations[station];
        let mut draw = Draw::new(self.n_max, users, d.pilot_len, self.t_samples.len());
        let mut work = Workspace::new(self.n_max, users, d.pilot_len);
        for trial in lo..hi {
            draw.fill(self, j, trial as u64);
            work.phasors.clear();
            for inst in &self.instances {
                self.evaluate(inst, station, &draw, &mut work, &mut acc);
            }
        }
        acc
    }

    fn evaluate(&self, inst: &Instance, station: usize, draw: &Draw, work: &mut Workspace, acc: &mut [TargetAccumulator]) {
        let d = self.cfg.stats.dims;
        let (b, users) = (d.pilot_len, d.total_users());
        let hw = inst.hw;
        let kappa2 = hw.kappa * hw.kappa;
        let n_top = *inst.sizes.last().unwrap_or(&0);
        let j = self.stations[station];
        let noise_amp = (self.cfg.stats.sigma2 * hw.xi).sqrt();
        work.select_phasors(draw, hw.delta);
        let pilot_rot = &work.phasors[work.current].1;
        for ix in 0..n_top * b {
            work.y[ix] = pilot_rot[ix] * draw.sig[ix]
                + draw.dist[ix] * hw.kappa
                + draw.z_noise[ix] * noise_amp;
        }
        let sampled = self.plan.distortion == DistortionMoment::Sampled;
        let want_mrc = self.plan.filters.contains(&FilterKind::Mrc);
        let want_mmse = self.plan.filters.contains(&FilterKind::ApproxMmse);
        let target0 = d.user_index(j, 0);
        for s in 0..inst.t_evals {
            let tp = &inst.prep[station][s];
            let unit_needed = want_mrc || (want_mmse && hw.kappa == 0.0);
            let modes = [(true, unit_needed), (false, want_mmse && hw.kappa > 0.0)];
            for (unit, needed) in modes {
                if !needed {
                    continue;
                }
                if unit {
                    work.w[..n_top].iter_mut().for_each(|w| *w = 1.0);
                } else {
                    let base = self.cfg.stats.sigma2 * hw.xi + (1.0 + kappa2) * tp.spc;
                    for n in 0..n_top {
                        let y = &work.y[n * b..(n + 1) * b];
                        work.w[n] = 1.0 / (base + kappa2 * quad_row(&tp.m, y));
                    }
                }
                work.reset();
                let mut n0 = 0;
                for (size_ix, &n_eval) in inst.sizes.iter().enumerate() {
                    work.accumulate(draw, n0, n_eval, b, users, s, sampled);
                    n0 = n_eval;
                    for (f_ix, &filter) in self.plan.filters.iter().enumerate() {
                        let (scale, mmse) = match (filter, unit) {
                            (FilterKind::Mrc, true) => (1.0, false),
                            (FilterKind::ApproxMmse, true) if hw.kappa == 0.0 => {
                                (1.0 / (self.cfg.stats.sigma2 * hw.xi + tp.spc), true)
                            }
                            (FilterKind::ApproxMmse, false) => (1.0, true),
                            _ => continue,
                        };
                        let point = inst.point[size_ix][f_ix];
                        let lu = if mmse {
                            let mut sys = tp.m.matmul(&work.q.scaled(scale));
                            sys.add_diagonal(1.0);
                            match Lu::new(&sys) {
                                Ok(lu) => Some(lu),
                                Err(_) => continue,
                            }
                        } else {
                            None
                        };
                        for k in 0..d.users {
                            let target = target0 + k;
                            let a0 = &tp.a[target * b..(target + 1) * b];
                            let coef = match &lu {
                                Some(lu) => lu.solve(a0),
                                None => a0.to_vec(),
                            };
                            work.project(&coef, scale, b, users);
                            let norm2 = scale * scale * work.q2.sesquilinear(&coef, &coef).re;
                            let distortion = match self.plan.distortion {
                                DistortionMoment::Conditional => kappa2 * scale * scale * work.qw.sesquilinear(&coef, &coef).re,
                                DistortionMoment::Sampled => {
                                    let r: C64 = coef.iter().zip(&work.r).map(|(c, r)| c.conj() * r).sum();
                                    kappa2 * scale * scale * r.norm_sqr()
                                }
                            };
                            let slot = self.slot(point, s, k);
                            acc[slot].push(target, &work.x, &self.cfg.stats.power, norm2, distortion);
                        }
                    }
                }
            }
        }
    }

    fn assemble(&self, partial: &[Vec<TargetAccumulator>]) -> EngineOutput {
        let d = self.cfg.stats.dims;
        let nb = self.plan.batches;
        let st = self.t_samples.len();
        let noise_of = |hw: &HardwareProfile| self.cfg.stats.sigma2 * hw.xi;
        let mut points = Vec::with_capacity(self.points.len());
        for (p, &(spec, hw, n, filter)) in self.points.iter().enumerate() {
            let t_evals = if hw.delta == 0.0 { 1 } else { st };
            let noise = noise_of(&hw);
            let mut users = Vec::new();
            let mut sum = 0.0;
            let mut leave_out = vec![0.0; nb];
            for (si, &j) in self.stations.iter().enumerate() {
                for k in 0..d.users {
                    let target = d.user_index(j, k);
                    let p_target = self.cfg.stats.power[target];
                    let per_batch: Vec<Vec<&TargetAccumulator>> = (0..t_evals)
                        .map(|s| (0..nb).map(|b| &partial[si * nb + b][self.slot(p, s, k)]).collect())
                        .collect();
                    let merged = |s: usize, skip: Option<usize>| {
                        let mut kept = per_batch[s].iter().enumerate().filter(|(b, _)| Some(*b) != skip).map(|(_, a)| *a);
                        let mut acc = kept.next().cloned().unwrap_or_default();
                        kept.for_each(|a| acc.merge(a));
                        acc
                    };
                    let expand = |v: Vec<f64>| -> Vec<f64> { (0..st).map(|s| v[s.min(v.len() - 1)]).collect() };
                    let full: Vec<TargetAccumulator> = (0..t_evals).map(|s| merged(s, None)).collect();
                    let sinr = expand(full.iter().map(|a| a.sinr(p_target, noise)).collect());
                    let rate = interpolated_rate(&self.t_samples, &sinr, d.pilot_len, d.coherence);
                    sum += rate;
                    for (g, lo) in leave_out.iter_mut().enumerate() {
                        let s_g = expand((0..t_evals).map(|s| merged(s, Some(g)).sinr(p_target, noise)).collect());
                        *lo += interpolated_rate(&self.t_samples, &s_g, d.pilot_len, d.coherence);
                    }
                    let moments = (0..st).map(|s| full[s.min(t_evals - 1)].moments()).collect();
                    users.push(UserResult { cell: j, user: k, sinr, rate, moments });
                }
            }
            let mean_lo = leave_out.iter().sum::<f64>() / nb as f64;
            let var = leave_out.iter().map(|x| (x - mean_lo).powi(2)).sum::<f64>() * (nb - 1) as f64 / nb as f64;
            points.push(CurvePoint { hardware: spec, profile: hw, antennas: n, filter, sum_rate: sum, sum_rate_se: var.sqrt(), users });
        }
        EngineOutput { t_samples: self.t_samples.clone(), points }
    }
}

/// `y M yᴴ` for the row vector `y`.
fn quad_row(m: &CMat, y: &[C64]) -> f64 {
    let b = y.len();
    let mut acc = C64::new(0.0, 0.0);
    for r in 0..b {
        let mut row = C64::new(0.0, 0.0);
        for c in 0..b {
            row += m[(r, c)] * y[c].conj();
        }
        acc += y[r] * row;
    }
    acc.re
}

fn prepare(ctx: &EstimatorContext, j: usize, t: usize) -> Result<TPrep> {
    let cfg = ctx.config();
    let b = cfg.stats.dims.pilot_len;
    let users = cfg.stats.dims.total_users();
    let mut a = Vec::with_capacity(users * b);
    let mut m = CMat::zeros(b, b);
    let mut spc = 0.0;
    for u in 0..users {
        // Row weights give hhat = sum_i a_i y_i; as a column `a_u`.
        let w = ctx.weights(j, u, t)?;
        let p = cfg.stats.power[u];
        for r in 0..b {
            for c in 0..b {
                m[(r, c)] += w[r] * w[c].conj() * p;
            }
        }
        spc += p * ctx.error_coefficient(j, u, t)?;
        a.extend(w);
    }
    Ok(TPrep { a, m, spc })
}

/// Random draws of one (BS, trial), at the largest array size.
struct Draw {
    n_max: usize,
    /// User-major channels, `h[u * n_max + n]`.
    h: Vec<C64>,
    /// `sum_u p_u |h_un|^2`.
    rx_power: Vec<f64>,
    /// Noise-free pilot signal before drift, `[n * B + i]`.
    sig: Vec<C64>,
    /// Pilot distortion at `kappa = 1`, scaled by the received power.
    dist: Vec<C64>,
    z_noise: Vec<C64>,
    /// Standard Wiener path at the pilot uses and at the sampled data uses.
    w_pilot: Vec<f64>,
    w_data: Vec<f64>,
    z_data: Vec<C64>,
}

fn unit_normal<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(scale * re, scale * im)
}

impl Draw {
    fn new(n_max: usize, users: usize, b: usize, st: usize) -> Self {
        let z = C64::new(0.0, 0.0);
        Self {
            n_max,
            h: vec![z; users * n_max],
            rx_power: vec![0.0; n_max],
            sig: vec![z; n_max * b],
            dist: vec![z; n_max * b],
            z_noise: vec![z; n_max * b],
            w_pilot: vec![0.0; n_max * b],
            w_data: vec![0.0; n_max * st],
            z_data: vec![z; n_max * st],
        }
    }

    fn fill(&mut self, layout: &Layout<'_>, j: usize, trial: u64) {
        let cfg = layout.cfg;
        let d = cfg.stats.dims;
        let (b, n_max) = (d.pilot_len, self.n_max);
        let mut rng = fast_rng(layout.plan.seed, Domain::Engine, &[j as u64, trial]);
        let lambda = cfg.stats.lambda_row(j);
        for (u, col) in self.h.chunks_exact_mut(n_max).enumerate() {
            let s = (0.5 * lambda[u]).sqrt();
            col.iter_mut().for_each(|h| *h = unit_normal(&mut rng, s));
        }
        let half = 0.5f64.sqrt();
        for ix in 0..n_max * b {
            self.dist[ix] = unit_normal(&mut rng, half);
            self.z_noise[ix] = unit_normal(&mut rng, half);
        }
        let ts = &layout.t_samples;
        for n in 0..n_max {
            let mut w = 0.0;
            for i in 0..b {
                w += rng.sample::<f64, _>(StandardNormal);
                self.w_pilot[n * b + i] = w;
            }
            let mut prev = b;
            for (s, &t) in ts.iter().enumerate() {
                w += ((t - prev) as f64).sqrt() * rng.sample::<f64, _>(StandardNormal);
                prev = t;
                self.w_data[n * ts.len() + s] = w;
            }
        }
        if layout.plan.distortion == DistortionMoment::Sampled {
            self.z_data.iter_mut().for_each(|z| *z = unit_normal(&mut rng, half));
        }

        let book = &cfg.book;
        let power = &cfg.stats.power;
        self.rx_power.iter_mut().for_each(|x| *x = 0.0);
        self.sig.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        let mut ppow = vec![0.0; n_max * b];
        let mut group_sig = vec![C64::new(0.0, 0.0); n_max];
        let mut group_pow = vec![0.0; n_max];
        for (g, members) in book.groups().iter().enumerate() {
            group_sig.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
            group_pow.iter_mut().for_each(|x| *x = 0.0);
            for &u in members {
                let amp = book.assignment[u].amplitude;
                let col = &self.h[u * n_max..(u + 1) * n_max];
                for n in 0..n_max {
                    let e = col[n].norm_sqr();
                    group_sig[n] += col[n] * amp;
                    group_pow[n] += amp * amp * e;
                    self.rx_power[n] += power[u] * e;
                }
            }
            let base = &book.bases[g];
            for n in 0..n_max {
                for i in 0..b {
                    self.sig[n * b + i] += base[i] * group_sig[n];
                    ppow[n * b + i] += base[i].norm_sqr() * group_pow[n];
                }
            }
        }
        for (z, p) in self.dist.iter_mut().zip(&ppow) {
            *z *= p.sqrt();
        }
    }
}

/// Per-trial buffers and the running products of one weighting.
struct Workspace {
    y: Vec<C64>,
    w: Vec<f64>,
    /// Drift phasors `(delta, pilot uses [n * B + i], data uses [n * S + s])`
    /// of the current trial.
    phasors: Vec<(f64, Vec<C64>, Vec<C64>)>,
    current: usize,
    g: Vec<C64>,
    z: Vec<C64>,
    /// Upper triangles of `Q`, `Q2` and `QW`, packed by rows.
    tri: Vec<[C64; 3]>,
    q: CMat,
    q2: CMat,
    qw: CMat,
    r: Vec<C64>,
    x: Vec<C64>,
}

impl Workspace {
    fn new(n_max: usize, users: usize, b: usize) -> Self {
        let zero = C64::new(0.0, 0.0);
        Self {
            y: vec![zero; n_max * b],
            w: vec![0.0; n_max],
            phasors: Vec::new(),
            current: 0,
            g: vec![zero; b * n_max],
            z: vec![zero; b * users],
            tri: vec![[zero; 3]; b * (b + 1) / 2],
            q: CMat::zeros(b, b),
            q2: CMat::zeros(b, b),
            qw: CMat::zeros(b, b),
            r: vec![zero; b],
            x: vec![zero; users],
        }
    }

    /// Selects the drift phasors of `delta`, computing them on first use in
    /// this trial.
    fn select_phasors(&mut self, draw: &Draw, delta: f64) {
        if let Some(ix) = self.phasors.iter().position(|p| p.0 == delta) {
            self.current = ix;
            return;
        }
        let sd = delta.sqrt();
        let pilot = draw.w_pilot.iter().map(|w| C64::from_polar(1.0, sd * w)).collect();
        let data = draw.w_data.iter().map(|w| C64::from_polar(1.0, sd * w)).collect();
        self.phasors.push((delta, pilot, data));
        self.current = self.phasors.len() - 1;
    }

    fn reset(&mut self) {
        let zero = C64::new(0.0, 0.0);
        self.z.iter_mut().for_each(|z| *z = zero);
        self.tri.iter_mut().for_each(|t| *t = [zero; 3]);
        self.r.iter_mut().for_each(|r| *r = zero);
    }

    /// Adds antennas `n0..n1` to `Z`, the Gram matrices and, for sampled
    /// distortion, its projection, all at sampled use `s`.
    #[allow(clippy::too_many_arguments)]
    fn accumulate(&mut self, draw: &Draw, n0: usize, n1: usize, b: usize, users: usize, s: usize, sampled: bool) {
        if n1 <= n0 {
            return;
        }
        let (n_max, st) = (draw.n_max, draw.w_data.len() / draw.n_max);
        let data_rot = &self.phasors[self.current].2;
        for n in n0..n1 {
            let (w, rot) = (self.w[n], data_rot[n * st + s]);
            let y = &self.y[n * b..(n + 1) * b];
            for (i, yi) in y.iter().enumerate() {
                self.g[i * n_max + n] = yi.conj() * rot * w;
            }
            let (w2, ww) = (w * w, w * w * draw.rx_power[n]);
            let mut k = 0;
            for (r, yr) in y.iter().enumerate() {
                let yr = yr.conj();
                for (t, yc) in self.tri[k..k + b - r].iter_mut().zip(&y[r..]) {
                    let p = yr * yc;
                    t[0] += p * w;
                    t[1] += p * w2;
                    t[2] += p * ww;
                }
                k += b - r;
            }
            if sampled {
                let amp = w * draw.rx_power[n].sqrt() * draw.z_data[n * st + s];
                for (r, yr) in self.r.iter_mut().zip(y) {
                    *r += yr.conj() * amp;
                }
            }
        }
        let mut k = 0;
        for r in 0..b {
            for c in r..b {
                let t = self.tri[k];
                for (m, v) in [&mut self.q, &mut self.q2, &mut self.qw].into_iter().zip(t) {
                    m[(r, c)] = v;
                    m[(c, r)] = v.conj();
                }
                k += 1;
            }
        }
        let nb = n1 - n0;
        gemm(
            &self.g[n0..],
            Strided { rows: b, cols: nb, row_stride: n_max, col_stride: 1 },
            &draw.h[n0..],
            Strided { rows: nb, cols: users, row_stride: 1, col_stride: n_max },
            1.0,
            &mut self.z,
            Strided::row_major(b, users),
        );
    }

    /// `x[u] = scale * sum_i conj(coef_i) Z[i][u]`.
    fn project(&mut self, coef: &[C64], scale: f64, b: usize, users: usize) {
        for (u, x) in self.x.iter_mut().enumerate() {
            let mut acc = C64::new(0.0, 0.0);
            for i in 0..b {
                acc += coef[i].conj() * self.z[i * users + u];
            }
            *x = acc * scale;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::lmmse_estimates;
    use crate::model::{build_pilot_book, validate, Dimensions, NetworkStats, PilotKind};
    use crate::montecarlo::{approx_mmse_filter, empirical_sinr, TrialPlan};
    use crate::rates::sinr_at;
    use crate::synth::PilotBlock;

    fn small(kind: PilotKind) -> SystemConfig {
        let dims = Dimensions::new(2, 2, 6, 2, 12).unwrap();
        let stats = NetworkStats {
            dims,
            lambda: vec![1.0, 0.5, 0.2, 0.1, 0.15, 0.3, 0.8, 0.6],
            power: vec![1.0, 2.0, 1.0, 0.5],
            sigma2: 1.0,
        };
        let book = build_pilot_book(kind, &dims, &stats.power).unwrap();
        validate(&stats, &book, &HardwareProfile::ideal()).unwrap()
    }

    fn plan(hw: HardwareProfile, antennas: Vec<usize>, trials: usize) -> EnginePlan {
        EnginePlan {
            trials,
            batches: 2,
            seed: 5,
            antennas,
            hardware: vec![HardwareSpec::Fixed(hw)],
            filters: vec![FilterKind::Mrc, FilterKind::ApproxMmse],
            t_sampling: TSampling::Explicit(vec![12]),
            distortion: DistortionMoment::Conditional,
            per_pair: true,
            stations: None,
        }
    }

    /// Filters rebuilt from scratch for the draws of the engine.
    fn direct_moments(cfg: &SystemConfig, p: &EnginePlan, j: usize, k: usize, n_ant: usize, filter: FilterKind) -> Vec<f64> {
        let layout = Layout::new(cfg, p).unwrap();
        let hw = layout.instances[0].hw;
        let scoped = cfg.with_hardware(hw).unwrap().with_antennas(n_ant);
        let ctx = EstimatorContext::new(&scoped).unwrap();
        let d = cfg.stats.dims;
        let (b, users, n_max) = (d.pilot_len, d.total_users(), layout.n_max);
        let target = d.user_index(j, k);
        let mut draw = Draw::new(n_max, users, b, 1);
        let mut sums = vec![0.0; users + 2];
        for trial in 0..p.trials {
            draw.fill(&layout, j, trial as u64);
            let columns = (0..b)
                .map(|i| {
                    (0..n_ant)
                        .map(|n| {
                            let ix = n * b + i;
                            C64::from_polar(1.0, hw.delta.sqrt() * draw.w_pilot[ix]) * draw.sig[ix]
                                + draw.dist[ix] * hw.kappa
                                + draw.z_noise[ix] * hw.xi.sqrt()
                        })
                        .collect()
                })
                .collect();
            let est = lmmse_estimates(&PilotBlock::from_columns(columns), &ctx, j, 12).unwrap();
            let v = match filter {
                FilterKind::Mrc => est[target].hhat.clone(),
                FilterKind::ApproxMmse => approx_mmse_filter(&est, &cfg.stats.power, &hw, 1.0, target).unwrap(),
            };
            for (u, s) in sums.iter_mut().take(users).enumerate() {
                let x: C64 = (0..n_ant)
                    .map(|n| {
                        v[n].conj() * C64::from_polar(1.0, hw.delta.sqrt() * draw.w_data[n]) * draw.h[u * n_max + n]
                    })
                    .sum();
                *s += x.norm_sqr();
            }
            sums[users] += v.iter().map(|z| z.norm_sqr()).sum::<f64>();
            sums[users + 1] +=
                hw.kappa * hw.kappa * (0..n_ant).map(|n| v[n].norm_sqr() * draw.rx_power[n]).sum::<f64>();
        }
        sums.iter().map(|s| s / p.trials as f64).collect()
    }

    #[test]
    fn woodbury_filters_match_direct_solves() {
        for kind in [PilotKind::SpatialDft, PilotKind::Temporal] {
            let cfg = small(kind);
            for hw in [HardwareProfile::new(0.01, 0.1, 2.0).unwrap(), HardwareProfile::new(0.0, 0.0, 1.5).unwrap()] {
                let p = plan(hw, vec![3, 6], 4);
                let out = run(&cfg, &p).unwrap();
                for point in &out.points {
                    for user in &point.users {
                        let direct = direct_moments(&cfg, &p, user.cell, user.user, point.antennas, point.filter);
                        let m = &user.moments[0];
                        let got: Vec<f64> =
                            m.second.iter().copied().chain([m.norm2, m.distortion]).collect();
                        for (a, b) in got.iter().zip(&direct) {
                            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-3), "{kind} {:?} {a} {b}", point.filter);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mrc_agrees_with_closed_form() {
        let cfg = small(PilotKind::SpatialDft);
        let hw = HardwareProfile::new(0.02, 0.15, 1.5).unwrap();
        let mut p = plan(hw, vec![2, 6], 40_000);
        p.filters = vec![FilterKind::Mrc];
        p.t_sampling = TSampling::All;
        p.batches = 8;
        let out = run(&cfg, &p).unwrap();
        let ctx = EstimatorContext::new(&cfg.with_hardware(hw).unwrap()).unwrap();
        for point in &out.points {
            let mut exact_sum = 0.0;
            for user in &point.users {
                let exact: Vec<f64> = out
                    .t_samples
                    .iter()
                    .map(|&t| sinr_at(&ctx, user.cell, user.user, t, point.antennas as f64).unwrap())
                    .collect();
                for (s, e) in user.sinr.iter().zip(&exact) {
                    assert!((s - e).abs() < 0.05 * e, "N = {} {s} {e}", point.antennas);
                }
                exact_sum += crate::rates::ergodic_rate(&exact, 12, 2).unwrap();
            }
            assert!((point.sum_rate - exact_sum).abs() < 4.0 * point.sum_rate_se + 1e-3 * exact_sum);
        }
    }

    #[test]
    fn mmse_agrees_with_reference_path() {
        let cfg = small(PilotKind::SpatialDft);
        let hw = HardwareProfile::new(0.01, 0.2, 2.0).unwrap();
        let mut p = plan(hw, vec![6], 20_000);
        p.filters = vec![FilterKind::ApproxMmse];
        p.batches = 4;
        let out = run(&cfg, &p).unwrap();
        let scoped = cfg.with_hardware(hw).unwrap();
        let reference = TrialPlan {
            trials: 20_000,
            master_seed: 9,
            t_samples: vec![12],
            filter: FilterKind::ApproxMmse,
            distortion: DistortionMoment::Conditional,
        };
        for user in &out.points[0].users {
            let rep = empirical_sinr(&reference, &scoped, user.cell, user.user).unwrap();
            let (a, b) = (&user.moments[0], &rep.moments[0]);
            let se = (a.norm2_se.powi(2) + b.norm2_se.powi(2)).sqrt();
            assert!((a.norm2 - b.norm2).abs() < 5.0 * se);
            for u in 0..4 {
                let se = (a.second_se[u].powi(2) + b.second_se[u].powi(2)).sqrt();
                assert!((a.second[u] - b.second[u]).abs() < 5.0 * se, "user {u}");
            }
            assert!((user.sinr[0] - rep.sinr[0]).abs() < 0.05 * rep.sinr[0]);
        }
    }

    #[test]
    fn output_is_independent_of_thread_count() {
        let cfg = small(PilotKind::Temporal);
        let mut p = plan(HardwareProfile::new(0.01, 0.1, 1.2).unwrap(), vec![2, 4, 6], 400);
        p.hardware.push(HardwareSpec::Scaled(ScalingExponents::new(0.5, 0.5, 0.0, 0.1, 1.0, 0.01).unwrap()));
        p.distortion = DistortionMoment::Sampled;
        p.t_sampling = TSampling::Stride(4);
        p.batches = 5;
        let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
        let one = pool(1).install(|| run(&cfg, &p).unwrap());
        let four = pool(4).install(|| run(&cfg, &p).unwrap());
        assert_eq!(one, four);
        assert_eq!(one.t_samples, vec![3, 7, 11, 12]);
        assert_eq!(one.points.len(), 2 * 3 * 2);
        let order: Vec<(usize, usize, FilterKind)> =
            one.points.iter().map(|p| (p.hardware, p.antennas, p.filter)).collect();
        assert_eq!(order[0..3], [(0, 2, FilterKind::Mrc), (0, 2, FilterKind::ApproxMmse), (0, 4, FilterKind::Mrc)]);
        assert!(one.points.iter().all(|p| p.sum_rate.is_finite() && p.sum_rate_se > 0.0));
    }

    #[test]
    fn sampling_and_plan_validation() {
        assert_eq!(TSampling::Stride(5).resolve(2, 12).unwrap(), vec![3, 8, 12]);
        assert_eq!(TSampling::All.resolve(10, 12).unwrap(), vec![11, 12]);
        assert_eq!(TSampling::Explicit(vec![12, 5, 5]).resolve(2, 12).unwrap(), vec![5, 12]);
        assert!(matches!(TSampling::Explicit(vec![2]).resolve(2, 12), Err(Error::Domain { .. })));
        assert!(TSampling::Stride(0).resolve(2, 12).is_err());

        let cfg = small(PilotKind::SpatialDft);
        let good = plan(HardwareProfile::ideal(), vec![2, 4], 10);
        assert!(run(&cfg, &good).is_ok());
        let mut p = good.clone();
        p.antennas = vec![4, 2];
        assert!(matches!(run(&cfg, &p), Err(Error::Validation(_))));
        let mut p = good.clone();
        p.trials = 1;
        assert!(matches!(run(&cfg, &p), Err(Error::InsufficientTrials { .. })));
        let mut p = good.clone();
        p.stations = Some(vec![2]);
        assert!(matches!(run(&cfg, &p), Err(Error::Validation(_))));
        let mut p = good;
        p.hardware = vec![HardwareSpec::Fixed(HardwareProfile { xi: 0.5, ..HardwareProfile::ideal() })];
        assert!(run(&cfg, &p).is_err());
    }
}

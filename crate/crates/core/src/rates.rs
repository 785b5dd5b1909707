//! Closed-form MRC performance: moments, SINR, ergodic rate, the large-array
//! limit, and the hardware scaling law.
//!
//! `N` enters every closed form only through the scalars `N` and `N (N - 1)`,
//! so it is taken as `f64` and arrays of any size cost the same.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::EstimatorContext;
use crate::linalg::C64;
use crate::model::{HardwareProfile, ScalingExponents, SystemConfig};
use crate::stats::compensated_sum;

/// Expectations entering the SINR of user `(j, k)` under MRC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrcMoments {
    /// `E{||v||^2}`.
    pub norm2: f64,
    /// `E{vᴴ h_jjk}`.
    pub first: f64,
    /// `E{|vᴴ h_jlm|^2}` by flat user index.
    pub second: Vec<f64>,
    /// `E{|vᴴ upsilon_j|^2}`.
    pub distortion: f64,
}

fn check_data_use(t: usize, cfg: &SystemConfig) -> Result<()> {
    let d = cfg.stats.dims;
    if t <= d.pilot_len || t > d.coherence {
        return Err(Error::Domain { t, min: d.pilot_len + 1, max: d.coherence });
    }
    Ok(())
}

fn check_target(j: usize, k: usize, cfg: &SystemConfig) -> Result<usize> {
    let d = cfg.stats.dims;
    if j >= d.cells || k >= d.users {
        return Err(Error::Index(format!("user ({j}, {k}) with {} cells of {} users", d.cells, d.users)));
    }
    Ok(d.user_index(j, k))
}

/// Moments at the configured number of antennas.
pub fn mrc_moments(ctx: &EstimatorContext, j: usize, k: usize, t: usize) -> Result<MrcMoments> {
    mrc_moments_at(ctx, j, k, t, ctx.config().stats.dims.antennas as f64)
}

/// Moments with `n` antennas, evaluated term by term for every interferer.
pub fn mrc_moments_at(ctx: &EstimatorContext, j: usize, k: usize, t: usize, n: f64) -> Result<MrcMoments> {
    let cfg = ctx.config();
    check_data_use(t, cfg)?;
    let target = check_target(j, k, cfg)?;
    let lambda = cfg.stats.lambda_row(j);
    let lam0 = lambda[target];
    let dx0 = ctx.decayed_pilot(target, t)?;
    let psi_inv = ctx.psi_inv(j);
    let quad = psi_inv.sesquilinear(&dx0, &dx0).re;
    let norm2 = n * lam0 * lam0 * quad;
    let first = norm2;
    let g = psi_inv.matvec(&dx0);
    let kappa2 = cfg.hw.kappa * cfg.hw.kappa;
    let mut second = Vec::with_capacity(lambda.len());
    let mut distortion = 0.0;
    for (u, &lam) in lambda.iter().enumerate() {
        let q = ctx.gram(u).sesquilinear(&g, &g).re;
        let dx = ctx.decayed_pilot(u, t)?;
        let c: C64 = psi_inv.sesquilinear(&dx0, &dx);
        let common = lam * norm2 + n * lam0 * lam0 * lam * lam * q;
        second.push(common + n * (n - 1.0) * lam0 * lam0 * lam * lam * c.norm_sqr());
        distortion += cfg.stats.power[u] * common;
    }
    Ok(MrcMoments { norm2, first, second, distortion: kappa2 * distortion })
}

/// SINR of user `(j, k)` from its MRC moments; zero when the filter is zero.
pub fn sinr_closed_form(m: &MrcMoments, cfg: &SystemConfig, j: usize, k: usize) -> Result<f64> {
    let target = check_target(j, k, cfg)?;
    if m.norm2 <= 0.0 {
        return Ok(0.0);
    }
    let p = &cfg.stats.power;
    let signal = p[target] * m.first * m.first;
    let interference = compensated_sum(p.iter().zip(&m.second).map(|(p, s)| p * s));
    let denom = interference - signal + m.distortion + cfg.stats.sigma2 * cfg.hw.xi * m.norm2;
    Ok(signal / denom)
}

/// `(1 / T) sum_t log2(1 + sinr[t])` over the `T - B` data uses.
pub fn ergodic_rate(sinr: &[f64], coherence: usize, pilot_len: usize) -> Result<f64> {
    if pilot_len > coherence || sinr.len() != coherence - pilot_len {
        return Err(Error::Index(format!(
            "{} SINR values for T = {coherence}, B = {pilot_len}",
            sinr.len()
        )));
    }
    Ok(compensated_sum(sinr.iter().map(|&s| log2_1p(s))) / coherence as f64)
}

fn log2_1p(x: f64) -> f64 {
    if x.is_infinite() {
        f64::INFINITY
    } else {
        x.ln_1p() / std::f64::consts::LN_2
    }
}

/// `N`-independent quantities from which the MRC SINR of one user at one
/// channel use follows for any array size:
/// `SINR(N) = N p a^2 / (u + (N - 1) v)`, with limit `p a^2 / v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrcCoefficients {
    pub p: f64,
    pub a: f64,
    pub u: f64,
    pub v: f64,
}

impl MrcCoefficients {
    pub fn sinr(&self, n: f64) -> f64 {
        if self.a <= 0.0 {
            return 0.0;
        }
        n * self.p * self.a * self.a / (self.u + (n - 1.0) * self.v)
    }

    /// `+inf` without pilot contamination.
    pub fn limit(&self) -> f64 {
        if self.a <= 0.0 {
            0.0
        } else if self.v == 0.0 {
            f64::INFINITY
        } else {
            self.p * self.a * self.a / self.v
        }
    }
}

/// Coefficients of user `(j, k)` at channel use `t`. Users sharing a pilot
/// base share their quadratic forms.
pub fn mrc_coefficients(ctx: &EstimatorContext, j: usize, k: usize, t: usize) -> Result<MrcCoefficients> {
    let cfg = ctx.config();
    check_data_use(t, cfg)?;
    let target = check_target(j, k, cfg)?;
    let book = &cfg.book;
    let lambda = cfg.stats.lambda_row(j);
    let power = &cfg.stats.power;
    let decay = ctx.decay(t)?;
    let dx0 = ctx.decayed_pilot(target, t)?;
    let g = ctx.psi_solve(j, &dx0);
    let s: f64 = dx0.iter().zip(&g).map(|(x, y)| x.conj() * y).sum::<C64>().re;
    let lam0 = lambda[target];
    let a = lam0 * lam0 * s;

    let per_base: Vec<(f64, f64)> = book
        .bases
        .iter()
        .enumerate()
        .map(|(b, base)| {
            let q = ctx.base_gram(b).sesquilinear(&g, &g).re;
            let (c, scale) = g
                .iter()
                .zip(base)
                .zip(&decay)
                .map(|((g, x), w)| g.conj() * x * *w)
                .fold((C64::new(0.0, 0.0), 0.0), |(c, s), v| (c + v, s + v.norm()));
            // Cross-correlations at round-off level are orthogonal pilots.
            let c2 = if c.norm() <= 8.0 * base.len() as f64 * f64::EPSILON * scale { 0.0 } else { c.norm_sqr() };
            (q, c2)
        })
        .collect();

    let mut sum_pl = 0.0;
    let mut sum_q = 0.0;
    let mut sum_c = 0.0;
    for (u, asg) in book.assignment.iter().enumerate() {
        let (q, c2) = per_base[asg.base];
        let w = power[u] * lambda[u] * lambda[u] * asg.amplitude * asg.amplitude;
        sum_pl += power[u] * lambda[u];
        sum_q += w * q;
        if u != target {
            sum_c += w * c2;
        }
    }
    let p = power[target];
    let kappa2 = cfg.hw.kappa * cfg.hw.kappa;
    let u = (1.0 + kappa2) * (a * sum_pl + lam0 * lam0 * sum_q) - p * a * a + cfg.stats.sigma2 * cfg.hw.xi * a;
    Ok(MrcCoefficients { p, a, u, v: lam0 * lam0 * sum_c })
}

/// SINR of user `(j, k)` at channel use `t` with `n` antennas.
pub fn sinr_at(ctx: &EstimatorContext, j: usize, k: usize, t: usize, n: f64) -> Result<f64> {
    Ok(mrc_coefficients(ctx, j, k, t)?.sinr(n))
}

/// Large-array limit of the SINR of user `(j, k)` at channel use `t`.
pub fn sinr_asymptotic(ctx: &EstimatorContext, j: usize, k: usize, t: usize) -> Result<f64> {
    Ok(mrc_coefficients(ctx, j, k, t)?.limit())
}

/// SINR over the data part of the block and the resulting rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinrReport {
    /// `sinr[i]` is the SINR at channel use `B + 1 + i`.
    pub sinr: Vec<f64>,
    pub rate: f64,
    /// Large-array limits at the same channel uses.
    pub asymptotic: Vec<f64>,
    pub asymptotic_rate: f64,
}

pub fn sinr_report(ctx: &EstimatorContext, j: usize, k: usize, n: f64) -> Result<SinrReport> {
    let d = ctx.config().stats.dims;
    let coeffs = user_coefficients(ctx, j, k)?;
    let sinr: Vec<f64> = coeffs.iter().map(|c| c.sinr(n)).collect();
    let asymptotic: Vec<f64> = coeffs.iter().map(MrcCoefficients::limit).collect();
    Ok(SinrReport {
        rate: ergodic_rate(&sinr, d.coherence, d.pilot_len)?,
        asymptotic_rate: ergodic_rate(&asymptotic, d.coherence, d.pilot_len)?,
        sinr,
        asymptotic,
    })
}

fn user_coefficients(ctx: &EstimatorContext, j: usize, k: usize) -> Result<Vec<MrcCoefficients>> {
    let d = ctx.config().stats.dims;
    (d.pilot_len + 1..=d.coherence).map(|t| mrc_coefficients(ctx, j, k, t)).collect()
}

/// Coefficients of every user over the whole data part of the block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCurves {
    pub coherence: usize,
    pub pilot_len: usize,
    /// `users[u][t - B - 1]` for flat user index `u`.
    pub users: Vec<Vec<MrcCoefficients>>,
}

impl NetworkCurves {
    pub fn new(ctx: &EstimatorContext) -> Result<Self> {
        let d = ctx.config().stats.dims;
        let users = (0..d.total_users())
            .into_par_iter()
            .map(|u| user_coefficients(ctx, u / d.users, u % d.users))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { coherence: d.coherence, pilot_len: d.pilot_len, users })
    }

    pub fn user_rates(&self, n: f64) -> Vec<f64> {
        self.users.iter().map(|c| self.rate_of(c.iter().map(|c| c.sinr(n)))).collect()
    }

    pub fn sum_rate(&self, n: f64) -> f64 {
        compensated_sum(self.user_rates(n))
    }

    pub fn limit_user_rates(&self) -> Vec<f64> {
        self.users.iter().map(|c| self.rate_of(c.iter().map(MrcCoefficients::limit))).collect()
    }

    pub fn limit_sum_rate(&self) -> f64 {
        compensated_sum(self.limit_user_rates())
    }

    fn rate_of(&self, sinr: impl Iterator<Item = f64>) -> f64 {
        compensated_sum(sinr.map(log2_1p)) / self.coherence as f64
    }
}

/// Whether the scaled hardware keeps the SINR at channel use `t` bounded away
/// from zero as `N` grows.
pub fn scaling_law_holds(exp: &ScalingExponents, t: usize, pilot_len: usize) -> bool {
    let span = t.saturating_sub(pilot_len) as f64;
    exp.tau1.max(exp.tau2) + 0.5 * exp.delta0 * span * exp.tau3 <= 0.5
}

/// Hardware profile at `n` antennas: `kappa^2 = kappa0^2 N^tau1`,
/// `xi = xi0 N^tau2`, `delta = delta0 (1 + tau3 ln N)`.
pub fn apply_scaling(exp: &ScalingExponents, n: f64) -> Result<HardwareProfile> {
    exp.check()?;
    if !(n >= 1.0) {
        return Err(Error::InvalidConfig(format!("array size must be >= 1, got {n}")));
    }
    HardwareProfile::analysis(
        exp.delta0 * (1.0 + exp.tau3 * n.ln()),
        exp.kappa0 * n.powf(0.5 * exp.tau1),
        exp.xi0 * n.powf(exp.tau2),
    )
}

/// Sum rate at each array size with hardware scaled to that size.
pub fn scaled_sum_rates(cfg: &SystemConfig, exp: &ScalingExponents, ns: &[f64]) -> Result<Vec<f64>> {
    ns.iter()
        .map(|&n| {
            let scaled = cfg.with_hardware(apply_scaling(exp, n)?)?;
            let curves = NetworkCurves::new(&EstimatorContext::new(&scaled)?)?;
            Ok(curves.sum_rate(n))
        })
        .collect()
}

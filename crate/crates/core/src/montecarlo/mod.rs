//! Monte Carlo estimation of the SINR expectations for MRC and approximate
//! MMSE receive filters.
//!
//! [`empirical_sinr`] is the direct reference: it draws whole realizations,
//! forms every estimate and filter explicitly, and averages. [`engine`] is the
//! fast path used for network-scale sweeps.

pub mod engine;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{lmmse_estimates, ChannelEstimate, EstimatorContext};
use crate::linalg::{CMat, Cholesky, C64};
use crate::model::{HardwareProfile, SystemConfig};
use crate::rng::{stream_rng, Domain};
use crate::stats::{ComplexStats, RunningStats};
use crate::synth::{complex_normal, Realization};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Mrc,
    #[serde(alias = "mmse")]
    ApproxMmse,
}

impl FilterKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FilterKind::Mrc => "mrc",
            FilterKind::ApproxMmse => "mmse",
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How `E{|vᴴ upsilon|^2}` is estimated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionMoment {
    /// Exact expectation over the distortion given the channels and filter.
    #[default]
    Conditional,
    /// One distortion vector drawn per trial and channel use.
    Sampled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub trials: usize,
    pub master_seed: u64,
    /// Data channel uses at which the SINR terms are sampled.
    pub t_samples: Vec<usize>,
    pub filter: FilterKind,
    #[serde(default)]
    pub distortion: DistortionMoment,
}

/// Sample means of the SINR expectations with their standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMoments {
    pub norm2: f64,
    pub norm2_se: f64,
    pub first: C64,
    pub first_se: f64,
    /// `E{|vᴴ h_jlm|^2}` by flat user index; empty unless requested.
    pub second: Vec<f64>,
    pub second_se: Vec<f64>,
    pub distortion: f64,
    pub distortion_se: f64,
}

/// Running sums for one target user at one channel use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TargetAccumulator {
    first: ComplexStats,
    /// `sum_{u != target} p_u |vᴴ h_u|^2`.
    other: RunningStats,
    norm2: RunningStats,
    distortion: RunningStats,
    pairs: Vec<RunningStats>,
}

impl TargetAccumulator {
    pub fn with_pairs(users: usize) -> Self {
        Self { pairs: vec![RunningStats::default(); users], ..Self::default() }
    }

    /// One trial: `x[u] = vᴴ h_u(t)` for every user.
    pub fn push(&mut self, target: usize, x: &[C64], power: &[f64], norm2: f64, distortion: f64) {
        let mut other = 0.0;
        for (u, (xu, p)) in x.iter().zip(power).enumerate() {
            if u != target {
                other += p * xu.norm_sqr();
            }
        }
        if !self.pairs.is_empty() {
            for (acc, xu) in self.pairs.iter_mut().zip(x) {
                acc.push(xu.norm_sqr());
            }
        }
        self.first.push(x[target]);
        self.other.push(other);
        self.norm2.push(norm2);
        self.distortion.push(distortion);
    }

    pub fn merge(&mut self, rhs: &Self) {
        self.first.merge(&rhs.first);
        self.other.merge(&rhs.other);
        self.norm2.merge(&rhs.norm2);
        self.distortion.merge(&rhs.distortion);
        for (a, b) in self.pairs.iter_mut().zip(&rhs.pairs) {
            a.merge(b);
        }
    }

    pub fn count(&self) -> u64 {
        self.norm2.count()
    }

    /// SINR with every expectation replaced by its sample mean; zero for a
    /// zero filter.
    pub fn sinr(&self, p_target: f64, noise: f64) -> f64 {
        let norm2 = self.norm2.mean();
        if norm2 <= 0.0 {
            return 0.0;
        }
        let signal = p_target * self.first.mean().norm_sqr();
        let self_var = p_target * self.first.biased_variance();
        signal / (self.other.mean() + self_var + self.distortion.mean() + noise * norm2)
    }

    pub fn moments(&self) -> EmpiricalMoments {
        EmpiricalMoments {
            norm2: self.norm2.mean(),
            norm2_se: self.norm2.std_error(),
            first: self.first.mean(),
            first_se: self.first.std_error(),
            second: self.pairs.iter().map(RunningStats::mean).collect(),
            second_se: self.pairs.iter().map(RunningStats::std_error).collect(),
            distortion: self.distortion.mean(),
            distortion_se: self.distortion.std_error(),
        }
    }
}

/// `v = (sum_lm p_lm (G_lm + kappa^2 diag(G_lm)) + sigma^2 xi I)^{-1} hhat_target`
/// with `G_lm = hhat_lm hhat_lmᴴ + c_lm I`, solved by a Hermitian
/// factorization.
pub fn approx_mmse_filter(
    estimates: &[ChannelEstimate],
    power: &[f64],
    hw: &HardwareProfile,
    sigma2: f64,
    target: usize,
) -> Result<Vec<C64>> {
    let n = estimates[target].hhat.len();
    let kappa2 = hw.kappa * hw.kappa;
    let mut a = CMat::zeros(n, n);
    let mut diag = sigma2 * hw.xi;
    for (est, &p) in estimates.iter().zip(power) {
        diag += p * (1.0 + kappa2) * est.c_coeff;
        for r in 0..n {
            let hr = est.hhat[r] * p;
            for c in 0..n {
                a[(r, c)] += hr * est.hhat[c].conj();
            }
            a[(r, r)] += kappa2 * p * est.hhat[r].norm_sqr();
        }
    }
    a.add_diagonal(diag);
    Ok(Cholesky::new(&a)?.solve(&estimates[target].hhat))
}

/// Empirical moments and SINR of one user at each sampled channel use.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalReport {
    pub t_samples: Vec<usize>,
    pub moments: Vec<EmpiricalMoments>,
    pub sinr: Vec<f64>,
}

const CHUNK: usize = 256;

/// Direct Monte Carlo over full realizations for user `(j, k)`. The result
/// depends only on `(master_seed, trials)`.
pub fn empirical_sinr(plan: &TrialPlan, cfg: &SystemConfig, j: usize, k: usize) -> Result<EmpiricalReport> {
    if plan.trials < 2 {
        return Err(Error::InsufficientTrials { required: 2, got: plan.trials });
    }
    let d = cfg.stats.dims;
    if j >= d.cells || k >= d.users {
        return Err(Error::Index(format!("user ({j}, {k})")));
    }
    if plan.t_samples.is_empty() {
        return Err(Error::InvalidConfig("no channel uses to sample".into()));
    }
    if let Some(&t) = plan.t_samples.iter().find(|&&t| t <= d.pilot_len || t > d.coherence) {
        return Err(Error::Domain { t, min: d.pilot_len + 1, max: d.coherence });
    }
    let ctx = EstimatorContext::new(cfg)?;
    let target = d.user_index(j, k);
    let users = d.total_users();
    let chunks = plan.trials.div_ceil(CHUNK);
    let partial = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![TargetAccumulator::with_pairs(users); plan.t_samples.len()];
            for trial in c * CHUNK..((c + 1) * CHUNK).min(plan.trials) {
                reference_trial(plan, cfg, &ctx, j, target, trial as u64, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![TargetAccumulator::with_pairs(users); plan.t_samples.len()];
    for acc in &partial {
        for (a, b) in total.iter_mut().zip(acc) {
            a.merge(b);
        }
    }
    let noise = cfg.stats.sigma2 * cfg.hw.xi;
    Ok(EmpiricalReport {
        t_samples: plan.t_samples.clone(),
        moments: total.iter().map(TargetAccumulator::moments).collect(),
        sinr: total.iter().map(|a| a.sinr(cfg.stats.power[target], noise)).collect(),
    })
}

fn reference_trial(
    plan: &TrialPlan,
    cfg: &SystemConfig,
    ctx: &EstimatorContext,
    j: usize,
    target: usize,
    trial: u64,
    acc: &mut [TargetAccumulator],
) -> Result<()> {
    let real = Realization::draw(cfg, plan.master_seed, trial)?;
    let stats = &cfg.stats;
    let kappa2 = cfg.hw.kappa * cfg.hw.kappa;
    let users = stats.dims.total_users();
    let n_ant = stats.dims.antennas;
    let received: Vec<f64> = (0..n_ant)
        .map(|n| (0..users).map(|u| stats.power[u] * real.channels.get(j, u)[n].norm_sqr()).sum())
        .collect();
    let mut rng = stream_rng(plan.master_seed, Domain::Monte, &[trial]);
    for (s, &t) in plan.t_samples.iter().enumerate() {
        let estimates = lmmse_estimates(&real.y_pilot[j], ctx, j, t)?;
        let v = match plan.filter {
            FilterKind::Mrc => estimates[target].hhat.clone(),
            FilterKind::ApproxMmse => approx_mmse_filter(&estimates, &stats.power, &cfg.hw, stats.sigma2, target)?,
        };
        let x: Vec<C64> = (0..users)
            .map(|u| {
                let h = real.effective_channel(j, u, t);
                v.iter().zip(&h).map(|(v, h)| v.conj() * h).sum()
            })
            .collect();
        let norm2: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        let distortion = match plan.distortion {
            DistortionMoment::Conditional => {
                kappa2 * v.iter().zip(&received).map(|(v, w)| v.norm_sqr() * w).sum::<f64>()
            }
            DistortionMoment::Sampled => {
                let ups: C64 = v
                    .iter()
                    .zip(&received)
                    .map(|(v, w)| v.conj() * complex_normal(&mut rng, kappa2 * w))
                    .sum();
                ups.norm_sqr()
            }
        };
        acc[s].push(target, &x, &stats.power, norm2, distortion);
    }
    Ok(())
}

/// Rate from SINR samples at a subset of channel uses: `log2(1 + SINR)` is
/// interpolated linearly between samples and held constant beyond them.
pub fn interpolated_rate(t_samples: &[usize], sinr: &[f64], pilot_len: usize, coherence: usize) -> f64 {
    let values: Vec<f64> = sinr.iter().map(|s| s.ln_1p() / std::f64::consts::LN_2).collect();
    let mut acc = crate::stats::Neumaier::new();
    let mut seg = 0;
    for t in pilot_len + 1..=coherence {
        while seg + 1 < t_samples.len() && t_samples[seg + 1] <= t {
            seg += 1;
        }
        let v = if t <= t_samples[0] {
            values[0]
        } else if seg + 1 >= t_samples.len() {
            values[seg]
        } else {
            let (t0, t1) = (t_samples[seg] as f64, t_samples[seg + 1] as f64);
            let w = (t as f64 - t0) / (t1 - t0);
            values[seg] * (1.0 - w) + values[seg + 1] * w
        };
        acc.add(v);
    }
    acc.total() / coherence as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_pilot_book, validate, Dimensions, NetworkStats, PilotKind};
    use crate::rates::{mrc_moments, sinr_closed_form};

    fn small(hw: HardwareProfile) -> SystemConfig {
        let dims = Dimensions::new(2, 2, 6, 2, 12).unwrap();
        let stats = NetworkStats {
            dims,
            lambda: vec![1.0, 0.5, 0.2, 0.1, 0.15, 0.3, 0.8, 0.6],
            power: vec![1.0, 2.0, 1.0, 0.5],
            sigma2: 1.0,
        };
        let book = build_pilot_book(PilotKind::SpatialDft, &dims, &stats.power).unwrap();
        validate(&stats, &book, &hw).unwrap()
    }

    #[test]
    fn mmse_filter_scalar_and_rank_one() {
        let one = ChannelEstimate { hhat: vec![C64::new(0.3, -0.4)], c_coeff: 0.2, mse: 0.2 };
        let hw = HardwareProfile::new(0.0, 0.1, 2.0).unwrap();
        let v = approx_mmse_filter(&[one.clone()], &[1.5], &hw, 1.0, 0).unwrap();
        let ratio = v[0] / one.hhat[0];
        assert!(ratio.im.abs() < 1e-15 && ratio.re > 0.0);

        let h = vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.1), C64::new(0.0, 1.0)];
        let est = ChannelEstimate { hhat: h.clone(), c_coeff: 0.0, mse: 0.0 };
        let v = approx_mmse_filter(&[est], &[2.0], &HardwareProfile::ideal(), 1.0, 0).unwrap();
        let s = v[0] / h[0];
        assert!(v.iter().zip(&h).all(|(a, b)| (a - b * s).norm() < 1e-14));
    }

    #[test]
    fn mmse_filter_solves_its_system() {
        let mut rng = stream_rng(3, Domain::Monte, &[]);
        let est: Vec<ChannelEstimate> = (0..3)
            .map(|i| ChannelEstimate {
                hhat: (0..5).map(|_| complex_normal(&mut rng, 1.0)).collect(),
                c_coeff: 0.1 * i as f64,
                mse: 0.0,
            })
            .collect();
        let hw = HardwareProfile::new(0.0, 0.2, 1.5).unwrap();
        let power = [1.0, 0.5, 2.0];
        let v = approx_mmse_filter(&est, &power, &hw, 1.0, 1).unwrap();
        // Rebuild A independently and check A v = hhat.
        for r in 0..5 {
            let mut acc = C64::new(0.0, 0.0);
            for c in 0..5 {
                let mut a = C64::new(0.0, 0.0);
                for (e, p) in est.iter().zip(power) {
                    a += e.hhat[r] * e.hhat[c].conj() * p;
                    if r == c {
                        a += p * (e.c_coeff + 0.04 * (e.hhat[r].norm_sqr() + e.c_coeff));
                    }
                }
                if r == c {
                    a += 1.5;
                }
                acc += a * v[c];
            }
            assert!((acc - est[1].hhat[r]).norm() < 1e-12);
        }
    }

    #[test]
    fn reference_matches_closed_form_mrc() {
        let cfg = small(HardwareProfile::new(0.01, 0.1, 2.0).unwrap());
        let plan = TrialPlan {
            trials: 20_000,
            master_seed: 17,
            t_samples: vec![12],
            filter: FilterKind::Mrc,
            distortion: DistortionMoment::Conditional,
        };
        let rep = empirical_sinr(&plan, &cfg, 0, 1).unwrap();
        let ctx = EstimatorContext::new(&cfg).unwrap();
        let m = mrc_moments(&ctx, 0, 1, 12).unwrap();
        let e = &rep.moments[0];
        assert!((e.norm2 - m.norm2).abs() < 4.0 * e.norm2_se);
        assert!((e.distortion - m.distortion).abs() < 4.0 * e.distortion_se);
        for u in 0..4 {
            assert!((e.second[u] - m.second[u]).abs() < 4.0 * e.second_se[u], "user {u}");
        }
        let exact = sinr_closed_form(&m, &cfg, 0, 1).unwrap();
        assert!((rep.sinr[0] - exact).abs() < 0.03 * exact);
    }

    #[test]
    fn reference_is_deterministic_and_validates_inputs() {
        let cfg = small(HardwareProfile::ideal());
        let mut plan = TrialPlan {
            trials: 600,
            master_seed: 1,
            t_samples: vec![3, 12],
            filter: FilterKind::ApproxMmse,
            distortion: DistortionMoment::Sampled,
        };
        assert_eq!(empirical_sinr(&plan, &cfg, 1, 0).unwrap(), empirical_sinr(&plan, &cfg, 1, 0).unwrap());
        plan.trials = 1;
        assert!(matches!(empirical_sinr(&plan, &cfg, 1, 0), Err(Error::InsufficientTrials { .. })));
        plan.trials = 10;
        plan.t_samples = vec![2];
        assert!(matches!(empirical_sinr(&plan, &cfg, 1, 0), Err(Error::Domain { .. })));
    }

    #[test]
    fn interpolated_rate_is_exact_for_linear_and_full_grids() {
        let all: Vec<usize> = (3..=12).collect();
        let sinr: Vec<f64> = all.iter().map(|&t| t as f64).collect();
        let exact = crate::rates::ergodic_rate(&sinr, 12, 2).unwrap();
        assert!((interpolated_rate(&all, &sinr, 2, 12) - exact).abs() < 1e-15);
        let r = interpolated_rate(&[5], &[3.0], 2, 12);
        assert!((r - 10.0 * 2.0 / 12.0).abs() < 1e-15);
        // log2(1 + s) = 1 at t = 3 and 3 at t = 12, linear in between.
        let r = interpolated_rate(&[3, 12], &[1.0, 7.0], 2, 12);
        let expect: f64 = (0..10).map(|i| 1.0 + 2.0 * i as f64 / 9.0).sum::<f64>() / 12.0;
        assert!((r - expect).abs() < 1e-14);
    }
}

//! LMMSE estimation of the effective channel `h_jlk(t) = D_phi_j(t) h_jlk`
//! from the received pilot block of BS `j`.

use crate::error::{Error, Result};
use crate::linalg::{CMat, Cholesky, C64};
use crate::model::{NetworkStats, SystemConfig};
use crate::synth::PilotBlock;

/// Diagonal of `D_delta(t)`: entry `i` (1-based) is `exp(-delta (t - i) / 2)`.
pub fn phase_decay(t: usize, pilot_len: usize, delta: f64) -> Result<Vec<f64>> {
    if t < pilot_len || pilot_len == 0 {
        return Err(Error::Domain { t, min: pilot_len.max(1), max: usize::MAX });
    }
    Ok((1..=pilot_len).map(|i| (-0.5 * delta * (t - i) as f64).exp()).collect())
}

/// Second-moment matrix of a pilot seen through distortion and phase drift.
pub fn pilot_gram(x: &[C64], kappa: f64, delta: f64) -> CMat {
    let b = x.len();
    CMat::from_fn(b, b, |r, c| {
        if r == c {
            C64::new(x[r].norm_sqr() * (1.0 + kappa * kappa), 0.0)
        } else {
            x[r] * x[c].conj() * (-0.5 * delta * r.abs_diff(c) as f64).exp()
        }
    })
}

/// `Psi_j = sum_lm lambda_jlm X_lm + sigma^2 xi I`, with `grams[u]` the gram
/// of flat user `u`.
pub fn psi_matrix(stats: &NetworkStats, j: usize, grams: &[CMat], xi: f64) -> CMat {
    let b = stats.dims.pilot_len;
    let mut psi = CMat::zeros(b, b);
    for (&lambda, x) in stats.lambda_row(j).iter().zip(grams) {
        psi.add_assign_scaled(x, lambda);
    }
    psi.add_diagonal(stats.sigma2 * xi);
    psi
}

/// Estimate of one effective channel with its error variance per antenna.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelEstimate {
    pub hhat: Vec<C64>,
    /// Error covariance is `c_coeff * I_N`.
    pub c_coeff: f64,
    pub mse: f64,
}

#[derive(Clone, Debug)]
struct BsCache {
    psi: CMat,
    chol: Cholesky,
    psi_inv: CMat,
}

/// Per-BS `Psi_j`, its factorization and inverse, and the pilot grams of one
/// configuration.
#[derive(Clone, Debug)]
pub struct EstimatorContext {
    cfg: SystemConfig,
    base_grams: Vec<CMat>,
    bs: Vec<BsCache>,
}

impl EstimatorContext {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        let book = &cfg.book;
        let (kappa, delta) = (cfg.hw.kappa, cfg.hw.delta);
        let base_grams: Vec<CMat> = book.bases.iter().map(|b| pilot_gram(b, kappa, delta)).collect();
        let grams: Vec<CMat> = book
            .assignment
            .iter()
            .map(|a| base_grams[a.base].scaled(a.amplitude * a.amplitude))
            .collect();
        let bs = (0..cfg.stats.dims.cells)
            .map(|j| {
                let psi = psi_matrix(&cfg.stats, j, &grams, cfg.hw.xi);
                let chol = Cholesky::new(&psi)?;
                let psi_inv = chol.inverse();
                Ok(BsCache { psi, chol, psi_inv })
            })
            .collect::<Result<_>>()?;
        Ok(Self { cfg: cfg.clone(), base_grams, bs })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn psi(&self, j: usize) -> &CMat {
        &self.bs[j].psi
    }

    pub fn psi_inv(&self, j: usize) -> &CMat {
        &self.bs[j].psi_inv
    }

    /// `Psi_j^{-1} b` through the Cholesky factor.
    pub fn psi_solve(&self, j: usize, b: &[C64]) -> Vec<C64> {
        self.bs[j].chol.solve(b)
    }

    /// `X_lm` of flat user `u`.
    pub fn gram(&self, u: usize) -> CMat {
        let a = self.cfg.book.assignment[u];
        self.base_grams[a.base].scaled(a.amplitude * a.amplitude)
    }

    /// Gram of a unit-amplitude base sequence.
    pub fn base_gram(&self, base: usize) -> &CMat {
        &self.base_grams[base]
    }

    pub fn decay(&self, t: usize) -> Result<Vec<f64>> {
        phase_decay(t, self.cfg.stats.dims.pilot_len, self.cfg.hw.delta)
    }

    /// `D_delta(t) x_u`.
    pub fn decayed_pilot(&self, u: usize, t: usize) -> Result<Vec<C64>> {
        let d = self.decay(t)?;
        Ok(self.cfg.book.sequence(u).iter().zip(&d).map(|(x, w)| x * *w).collect())
    }

    /// Row `a = lambda_jlk x_uᴴ D_delta(t) Psi_j^{-1}`, so that
    /// `hhat = sum_i a_i y_j(i)`.
    pub fn weights(&self, j: usize, u: usize, t: usize) -> Result<Vec<C64>> {
        self.check_indices(j, u)?;
        let dx = self.decayed_pilot(u, t)?;
        let lambda = self.cfg.stats.lambda_row(j)[u];
        // a = lambda (Psi^{-1} D x)ᴴ since Psi is Hermitian and D real.
        Ok(self.psi_solve(j, &dx).into_iter().map(|g| g.conj() * lambda).collect())
    }

    /// `c_jlk` with the error covariance `c I_N`, floored at zero.
    pub fn error_coefficient(&self, j: usize, u: usize, t: usize) -> Result<f64> {
        self.check_indices(j, u)?;
        let dx = self.decayed_pilot(u, t)?;
        let lambda = self.cfg.stats.lambda_row(j)[u];
        let q = self.psi_inv(j).sesquilinear(&dx, &dx).re;
        Ok((lambda * (1.0 - lambda * q)).max(0.0))
    }

    fn check_indices(&self, j: usize, u: usize) -> Result<()> {
        let d = &self.cfg.stats.dims;
        if j >= d.cells || u >= d.total_users() {
            return Err(Error::Index(format!("BS {j}, user {u} with {} cells and {} users", d.cells, d.total_users())));
        }
        Ok(())
    }
}

/// `hhat_jlk(t)` from the pilot block of BS `j`.
pub fn lmmse_estimate(block: &PilotBlock, ctx: &EstimatorContext, j: usize, u: usize, t: usize) -> Result<ChannelEstimate> {
    let a = ctx.weights(j, u, t)?;
    let c = ctx.error_coefficient(j, u, t)?;
    let hhat = combine(block, &a);
    let mse = c * hhat.len() as f64;
    Ok(ChannelEstimate { hhat, c_coeff: c, mse })
}

/// Estimates of every user's channel at BS `j`, sharing one pilot block.
pub fn lmmse_estimates(block: &PilotBlock, ctx: &EstimatorContext, j: usize, t: usize) -> Result<Vec<ChannelEstimate>> {
    (0..ctx.cfg.stats.dims.total_users()).map(|u| lmmse_estimate(block, ctx, j, u, t)).collect()
}

fn combine(block: &PilotBlock, a: &[C64]) -> Vec<C64> {
    let n = block.column(0).len();
    let mut out = vec![C64::new(0.0, 0.0); n];
    for (i, &w) in a.iter().enumerate() {
        for (o, y) in out.iter_mut().zip(block.column(i)) {
            *o += w * y;
        }
    }
    out
}

//! Random draws of channels, phase drift, distortion and receiver noise, and
//! the received signal model
//!
//! `y_j(t) = D_phi_j(t) sum_l H_jl x_l(t) + upsilon_j(t) + eta_j(t)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::model::{Dimensions, HardwareProfile, NetworkStats, PilotBook, SystemConfig};
use crate::rng::{stream_rng, Domain};

/// Sample of `CN(0, var)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}

/// Channels `h_jlk` of every (BS, user) pair, `N` entries each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelTensor {
    cells: usize,
    users: usize,
    antennas: usize,
    data: Vec<C64>,
}

impl ChannelTensor {
    pub fn antennas(&self) -> usize {
        self.antennas
    }

    /// `h_jlk` for receiving BS `j` and flat user index `u = l * K + k`.
    pub fn get(&self, j: usize, u: usize) -> &[C64] {
        let lk = self.cells * self.users;
        let start = (j * lk + u) * self.antennas;
        &self.data[start..start + self.antennas]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }
}

pub fn draw_channels(stats: &NetworkStats, seed: u64) -> ChannelTensor {
    draw_channels_with(stats, &mut stream_rng(seed, Domain::Channels, &[]))
}

pub fn draw_channels_with<R: Rng + ?Sized>(stats: &NetworkStats, rng: &mut R) -> ChannelTensor {
    let d = stats.dims;
    let mut data = Vec::with_capacity(stats.lambda.len() * d.antennas);
    for &lambda in &stats.lambda {
        for _ in 0..d.antennas {
            data.push(complex_normal(rng, lambda));
        }
    }
    ChannelTensor { cells: d.cells, users: d.users, antennas: d.antennas, data }
}

/// Wiener phase paths `phi_jn(t)` for `t = 0..=T`, one per BS antenna.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseTrajectories {
    antennas: usize,
    coherence: usize,
    data: Vec<f64>,
}

impl PhaseTrajectories {
    /// `phi_jn(0..=T)`.
    pub fn path(&self, j: usize, n: usize) -> &[f64] {
        let len = self.coherence + 1;
        let start = (j * self.antennas + n) * len;
        &self.data[start..start + len]
    }

    pub fn at(&self, j: usize, n: usize, t: usize) -> f64 {
        self.path(j, n)[t]
    }
}

pub fn draw_phase_trajectories(delta: f64, dims: &Dimensions, seed: u64) -> PhaseTrajectories {
    draw_phase_trajectories_with(delta, dims, &mut stream_rng(seed, Domain::Phase, &[]))
}

pub fn draw_phase_trajectories_with<R: Rng + ?Sized>(delta: f64, dims: &Dimensions, rng: &mut R) -> PhaseTrajectories {
    let len = dims.coherence + 1;
    let mut data = vec![0.0; dims.cells * dims.antennas * len];
    if delta > 0.0 {
        let s = delta.sqrt();
        for path in data.chunks_exact_mut(len) {
            for t in 1..len {
                let z: f64 = rng.sample(StandardNormal);
                path[t] = path[t - 1] + s * z;
            }
        }
    }
    PhaseTrajectories { antennas: dims.antennas, coherence: dims.coherence, data }
}

/// What every user sends in one channel use, with the expected power that
/// drives the distortion variance.
#[derive(Clone, Debug, PartialEq)]
pub struct TransmitSlot {
    pub symbols: Vec<C64>,
    pub expected_power: Vec<f64>,
}

impl TransmitSlot {
    /// Pilot symbol `i` (0-based) of every user.
    pub fn pilot(book: &PilotBook, i: usize) -> Self {
        let symbols: Vec<C64> = (0..book.assignment.len()).map(|u| book.symbol(u, i)).collect();
        let expected_power = symbols.iter().map(|x| x.norm_sqr()).collect();
        Self { symbols, expected_power }
    }

    /// Gaussian data symbols at full power.
    pub fn data<R: Rng + ?Sized>(stats: &NetworkStats, rng: &mut R) -> Self {
        let symbols = stats.power.iter().map(|&p| complex_normal(rng, p)).collect();
        Self { symbols, expected_power: stats.power.clone() }
    }

    pub fn silent(users: usize) -> Self {
        Self { symbols: vec![C64::new(0.0, 0.0); users], expected_power: vec![0.0; users] }
    }
}

/// Received vectors `y_j(t)` of every BS for one channel use `1 <= t <= T`.
pub fn received_block<R: Rng + ?Sized>(
    t: usize,
    slot: &TransmitSlot,
    channels: &ChannelTensor,
    phase: &PhaseTrajectories,
    hw: &HardwareProfile,
    stats: &NetworkStats,
    rng: &mut R,
) -> Result<Vec<Vec<C64>>> {
    let d = stats.dims;
    if t == 0 || t > d.coherence {
        return Err(Error::Domain { t, min: 1, max: d.coherence });
    }
    let lk = d.total_users();
    if slot.symbols.len() != lk || slot.expected_power.len() != lk {
        return Err(Error::Index(format!("transmit slot covers {} users, expected {lk}", slot.symbols.len())));
    }
    let n_ant = channels.antennas();
    let kappa2 = hw.kappa * hw.kappa;
    let noise_var = stats.sigma2 * hw.xi;
    let mut out = Vec::with_capacity(d.cells);
    for j in 0..d.cells {
        let mut signal = vec![C64::new(0.0, 0.0); n_ant];
        let mut power = vec![0.0; n_ant];
        for u in 0..lk {
            let (x, p) = (slot.symbols[u], slot.expected_power[u]);
            let h = channels.get(j, u);
            for n in 0..n_ant {
                signal[n] += h[n] * x;
                power[n] += p * h[n].norm_sqr();
            }
        }
        let y = (0..n_ant)
            .map(|n| {
                let rot = C64::from_polar(1.0, phase.at(j, n, t));
                let distortion = complex_normal(rng, kappa2 * power[n]);
                let noise = complex_normal(rng, noise_var);
                rot * signal[n] + distortion + noise
            })
            .collect();
        out.push(y);
    }
    Ok(out)
}

/// Received pilot block of one BS: column `i` is `y_j(i + 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotBlock {
    antennas: usize,
    data: Vec<C64>,
}

impl PilotBlock {
    pub fn from_columns(columns: Vec<Vec<C64>>) -> Self {
        let antennas = columns.first().map_or(0, Vec::len);
        Self { antennas, data: columns.into_iter().flatten().collect() }
    }

    pub fn len(&self) -> usize {
        if self.antennas == 0 {
            0
        } else {
            self.data.len() / self.antennas
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn column(&self, i: usize) -> &[C64] {
        &self.data[i * self.antennas..(i + 1) * self.antennas]
    }
}

/// One Monte Carlo draw of a coherence block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Realization {
    pub channels: ChannelTensor,
    pub phase: PhaseTrajectories,
    /// Per BS.
    pub y_pilot: Vec<PilotBlock>,
    pub seed: u64,
    pub trial: u64,
}

impl Realization {
    /// Fully determined by `(master, trial)`.
    pub fn draw(cfg: &SystemConfig, master: u64, trial: u64) -> Result<Self> {
        let stats = &cfg.stats;
        let d = stats.dims;
        let channels = draw_channels_with(stats, &mut stream_rng(master, Domain::Channels, &[trial]));
        let phase = draw_phase_trajectories_with(cfg.hw.delta, &d, &mut stream_rng(master, Domain::Phase, &[trial]));
        let mut rx = stream_rng(master, Domain::Receiver, &[trial]);
        let mut columns = vec![Vec::with_capacity(d.pilot_len); d.cells];
        for i in 0..d.pilot_len {
            let slot = TransmitSlot::pilot(&cfg.book, i);
            for (j, y) in received_block(i + 1, &slot, &channels, &phase, &cfg.hw, stats, &mut rx)?.into_iter().enumerate() {
                columns[j].push(y);
            }
        }
        let y_pilot = columns.into_iter().map(PilotBlock::from_columns).collect();
        Ok(Self { channels, phase, y_pilot, seed: master, trial })
    }

    /// Effective channel `D_phi_j(t) h_jlk`.
    pub fn effective_channel(&self, j: usize, u: usize, t: usize) -> Vec<C64> {
        self.channels
            .get(j, u)
            .iter()
            .enumerate()
            .map(|(n, h)| C64::from_polar(1.0, self.phase.at(j, n, t)) * h)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_pilot_book, validate, PilotKind};

    fn unit_stats(cells: usize, users: usize, antennas: usize) -> NetworkStats {
        let dims = Dimensions::new(cells, users, antennas, users.max(1), 10).unwrap();
        NetworkStats {
            dims,
            lambda: vec![1.0; cells * cells * users],
            power: vec![1.0; cells * users],
            sigma2: 1.0,
        }
    }

    #[test]
    fn channel_power_and_independence() {
        let stats = unit_stats(1, 2, 50_000);
        let h = draw_channels(&stats, 7);
        let (a, b) = (h.get(0, 0), h.get(0, 1));
        let n = a.len() as f64;
        let pa: f64 = a.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        let pb: f64 = b.iter().map(|z| z.norm_sqr()).sum::<f64>() / n;
        assert!((pa - 1.0).abs() < 0.02 && (pb - 1.0).abs() < 0.02, "{pa} {pb}");
        let corr: C64 = a.iter().zip(b).map(|(x, y)| x * y.conj()).sum::<C64>() / n;
        assert!(corr.norm() < 0.02, "{corr}");
        assert_eq!(h, draw_channels(&stats, 7));
        assert_ne!(h, draw_channels(&stats, 8));
    }

    #[test]
    fn zero_drift_keeps_phase_at_zero() {
        let dims = Dimensions::new(2, 1, 3, 1, 50).unwrap();
        let phi = draw_phase_trajectories(0.0, &dims, 1);
        assert!((0..2).all(|j| (0..3).all(|n| phi.path(j, n).iter().all(|&x| x == 0.0))));
    }

    #[test]
    fn wiener_endpoint_variance() {
        let dims = Dimensions::new(1, 1, 10_000, 1, 500).unwrap();
        let phi = draw_phase_trajectories(0.01, &dims, 3);
        let ends: Vec<f64> = (0..10_000).map(|n| phi.at(0, n, 500)).collect();
        let mean = ends.iter().sum::<f64>() / ends.len() as f64;
        let var = ends.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (ends.len() - 1) as f64;
        assert!((var - 5.0).abs() < 0.15, "{var}");
        assert!((0..10).all(|n| phi.at(0, n, 0) == 0.0));
        assert_eq!(phi, draw_phase_trajectories(0.01, &dims, 3));
    }

    #[test]
    fn conventional_model_is_noiseless_when_ideal_and_silent_noise_is_xi() {
        let stats = unit_stats(1, 1, 1);
        let ch = draw_channels(&stats, 2);
        let phi = draw_phase_trajectories(0.0, &stats.dims, 2);
        let hw = HardwareProfile::new(0.0, 0.0, 3.0).unwrap();
        let mut rng = stream_rng(9, Domain::Receiver, &[]);
        let trials = 40_000;
        let mut acc = 0.0;
        for _ in 0..trials {
            let y = received_block(1, &TransmitSlot::silent(1), &ch, &phi, &hw, &stats, &mut rng).unwrap();
            acc += y[0][0].norm_sqr();
        }
        let var = acc / trials as f64;
        assert!((var - 3.0).abs() < 0.06, "{var}");
        let err = received_block(11, &TransmitSlot::silent(1), &ch, &phi, &hw, &stats, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Domain { t: 11, .. }));
    }

    #[test]
    fn phase_drift_preserves_magnitude() {
        let mut stats = unit_stats(1, 1, 4);
        stats.dims.coherence = 20;
        let book = build_pilot_book(PilotKind::Temporal, &stats.dims, &stats.power).unwrap();
        let hw = HardwareProfile::new(0.3, 0.0, 1.0).unwrap();
        let cfg = validate(&stats, &book, &hw).unwrap();
        let r = Realization::draw(&cfg, 5, 0).unwrap();
        for t in 0..=20 {
            let e = r.effective_channel(0, 0, t);
            for (a, b) in e.iter().zip(r.channels.get(0, 0)) {
                assert!((a.norm() - b.norm()).abs() < 1e-14);
            }
        }
        assert_eq!(r, Realization::draw(&cfg, 5, 0).unwrap());
    }
}

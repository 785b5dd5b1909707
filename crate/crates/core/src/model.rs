//! Dimension, hardware and pilot types shared by every other module.
//!
//! Users are addressed by a flat index `u = l * K + k` (cell `l`, user `k`).
//! Attenuations are stored as `lambda[(j * L + l) * K + k]` for receiving BS `j`.
//! Every quantity is in linear scale.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;

/// Network and block dimensions. Channel uses are counted from 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dimensions {
    /// Number of cells `L`.
    pub cells: usize,
    /// Users per cell `K`.
    pub users: usize,
    /// BS antennas `N`.
    pub antennas: usize,
    /// Pilot length `B`.
    pub pilot_len: usize,
    /// Coherence block length `T`.
    pub coherence: usize,
}

impl Dimensions {
    pub fn new(cells: usize, users: usize, antennas: usize, pilot_len: usize, coherence: usize) -> Result<Self> {
        let dims = Self { cells, users, antennas, pilot_len, coherence };
        let problems = dims.violations();
        if problems.is_empty() {
            Ok(dims)
        } else {
            Err(Error::Validation(problems))
        }
    }

    pub fn with_antennas(self, antennas: usize) -> Self {
        Self { antennas, ..self }
    }

    /// Total number of users `L * K`.
    pub fn total_users(&self) -> usize {
        self.cells * self.users
    }

    pub fn user_index(&self, cell: usize, user: usize) -> usize {
        cell * self.users + user
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, v) in [
            ("cells", self.cells),
            ("users", self.users),
            ("antennas", self.antennas),
            ("pilot_len", self.pilot_len),
            ("coherence", self.coherence),
        ] {
            if v == 0 {
                out.push(format!("{name} must be positive"));
            }
        }
        if self.users > self.pilot_len {
            out.push(format!("pilot length {} is shorter than users per cell {}", self.pilot_len, self.users));
        }
        if self.pilot_len > self.coherence {
            out.push(format!("pilot length {} exceeds coherence block {}", self.pilot_len, self.coherence));
        }
        out
    }
}

/// Which lower bound applies to the noise amplification factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileRule {
    /// Physical receivers: `xi >= 1`.
    #[default]
    Simulation,
    /// Scaling-law inputs: `xi >= 0`.
    Analysis,
}

/// BS hardware imperfections: phase-drift innovation variance `delta` (rad^2),
/// EVM `kappa` and noise amplification `xi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    pub delta: f64,
    pub kappa: f64,
    pub xi: f64,
    #[serde(default)]
    pub rule: ProfileRule,
}

impl HardwareProfile {
    pub fn new(delta: f64, kappa: f64, xi: f64) -> Result<Self> {
        let hw = Self { delta, kappa, xi, rule: ProfileRule::Simulation };
        hw.check()?;
        Ok(hw)
    }

    pub fn analysis(delta: f64, kappa: f64, xi: f64) -> Result<Self> {
        let hw = Self { delta, kappa, xi, rule: ProfileRule::Analysis };
        hw.check()?;
        Ok(hw)
    }

    pub fn ideal() -> Self {
        Self { delta: 0.0, kappa: 0.0, xi: 1.0, rule: ProfileRule::Simulation }
    }

    pub fn is_ideal(&self) -> bool {
        self.delta == 0.0 && self.kappa == 0.0 && self.xi == 1.0
    }

    pub fn check(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            out.push(format!("phase-drift variance must be finite and >= 0, got {}", self.delta));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            out.push(format!("EVM must be finite and >= 0, got {}", self.kappa));
        }
        let floor = match self.rule {
            ProfileRule::Simulation => 1.0,
            ProfileRule::Analysis => 0.0,
        };
        if !(self.xi >= floor && self.xi.is_finite()) {
            out.push(format!("noise amplification must be finite and >= {floor}, got {}", self.xi));
        }
        out
    }
}

/// Exponents and base values of hardware parameters that grow with `N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingExponents {
    pub tau1: f64,
    pub tau2: f64,
    pub tau3: f64,
    pub kappa0: f64,
    pub xi0: f64,
    pub delta0: f64,
}

impl ScalingExponents {
    pub fn new(tau1: f64, tau2: f64, tau3: f64, kappa0: f64, xi0: f64, delta0: f64) -> Result<Self> {
        let exp = Self { tau1, tau2, tau3, kappa0, xi0, delta0 };
        exp.check()?;
        Ok(exp)
    }

    pub fn check(&self) -> Result<()> {
        let bad: Vec<String> = [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("tau3", self.tau3),
            ("kappa0", self.kappa0),
            ("xi0", self.xi0),
            ("delta0", self.delta0),
        ]
        .iter()
        .filter(|(_, v)| !(*v >= 0.0 && v.is_finite()))
        .map(|(n, v)| format!("{n} must be finite and >= 0, got {v}"))
        .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

/// Large-scale statistics of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub dims: Dimensions,
    /// `lambda[(j * L + l) * K + k]`.
    pub lambda: Vec<f64>,
    /// Per-user transmit power, indexed by flat user index.
    pub power: Vec<f64>,
    pub sigma2: f64,
}

impl NetworkStats {
    pub fn lambda(&self, j: usize, l: usize, k: usize) -> f64 {
        self.lambda[(j * self.dims.cells + l) * self.dims.users + k]
    }

    /// Attenuations from every user to BS `j`, indexed by flat user index.
    pub fn lambda_row(&self, j: usize) -> &[f64] {
        let lk = self.dims.total_users();
        &self.lambda[j * lk..(j + 1) * lk]
    }

    fn violations(&self) -> Vec<String> {
        let mut out = self.dims.violations();
        let lk = self.dims.total_users();
        if self.lambda.len() != self.dims.cells * lk {
            out.push(format!("attenuation tensor has {} entries, expected {}", self.lambda.len(), self.dims.cells * lk));
        } else if let Some((ix, v)) = self.lambda.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            let (j, rest) = (ix / lk, ix % lk);
            out.push(format!(
                "attenuation lambda[{j}][{}][{}] = {v} must be finite and > 0",
                rest / self.dims.users,
                rest % self.dims.users
            ));
        }
        if self.power.len() != lk {
            out.push(format!("power vector has {} entries, expected {lk}", self.power.len()));
        } else if let Some((u, v)) = self.power.iter().enumerate().find(|(_, v)| !(**v >= 0.0 && v.is_finite())) {
            out.push(format!("power of user {u} = {v} must be finite and >= 0"));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            out.push(format!("noise variance must be finite and > 0, got {}", self.sigma2));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotKind {
    /// Columns of the B x B DFT matrix, orthogonal in the signal space.
    SpatialDft,
    /// One nonzero symbol per user, in distinct channel uses.
    Temporal,
    /// Arbitrary user-supplied sequences.
    Custom,
}

impl PilotKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PilotKind::SpatialDft => "spatial_dft",
            PilotKind::Temporal => "temporal",
            PilotKind::Custom => "custom",
        }
    }
}

impl fmt::Display for PilotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PilotKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial_dft" | "spatial" | "dft" => Ok(PilotKind::SpatialDft),
            "temporal" => Ok(PilotKind::Temporal),
            "custom" => Ok(PilotKind::Custom),
            other => Err(Error::Unsupported(format!("pilot kind `{other}`"))),
        }
    }
}

/// Sequence of user `u` is `amplitude * bases[base]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotAssignment {
    pub base: usize,
    pub amplitude: f64,
}

/// Pilot sequences of every user, stored as a small set of shared base
/// sequences plus a per-user (base, amplitude) assignment. Users that share a
/// base reuse the same pilot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotBook {
    pub kind: PilotKind,
    pub length: usize,
    pub bases: Vec<Vec<C64>>,
    pub assignment: Vec<PilotAssignment>,
}

impl PilotBook {
    /// One base per user; the reuse map is recovered only for identical input.
    pub fn custom(dims: &Dimensions, sequences: Vec<Vec<C64>>) -> Result<Self> {
        if sequences.len() != dims.total_users() {
            return Err(Error::InvalidConfig(format!(
                "{} pilot sequences given for {} users",
                sequences.len(),
                dims.total_users()
            )));
        }
        if let Some(s) = sequences.iter().find(|s| s.len() != dims.pilot_len) {
            return Err(Error::InvalidConfig(format!("pilot sequence of length {} (expected {})", s.len(), dims.pilot_len)));
        }
        let mut bases: Vec<Vec<C64>> = Vec::new();
        let mut assignment = Vec::with_capacity(sequences.len());
        for s in sequences {
            let base = match bases.iter().position(|b| *b == s) {
                Some(ix) => ix,
                None => {
                    bases.push(s);
                    bases.len() - 1
                }
            };
            assignment.push(PilotAssignment { base, amplitude: 1.0 });
        }
        Ok(Self { kind: PilotKind::Custom, length: dims.pilot_len, bases, assignment })
    }

    pub fn sequence(&self, u: usize) -> Vec<C64> {
        let a = self.assignment[u];
        self.bases[a.base].iter().map(|z| z * a.amplitude).collect()
    }

    pub fn symbol(&self, u: usize, i: usize) -> C64 {
        let a = self.assignment[u];
        self.bases[a.base][i] * a.amplitude
    }

    /// Users grouped by the base sequence they transmit.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.bases.len()];
        for (u, a) in self.assignment.iter().enumerate() {
            g[a.base].push(u);
        }
        g
    }

    /// Users `(l, k)` that share a sequence with user `u`, excluding `u`.
    pub fn reusers(&self, u: usize) -> Vec<usize> {
        let base = self.assignment[u].base;
        (0..self.assignment.len()).filter(|&v| v != u && self.assignment[v].base == base).collect()
    }

    pub fn energy(&self, u: usize) -> f64 {
        self.sequence(u).iter().map(|z| z.norm_sqr()).sum()
    }

    fn violations(&self, dims: &Dimensions, power: &[f64]) -> Vec<String> {
        let mut out = Vec::new();
        if self.length != dims.pilot_len {
            out.push(format!("pilot length {} differs from B = {}", self.length, dims.pilot_len));
            return out;
        }
        if self.assignment.len() != dims.total_users() {
            out.push(format!("pilot book covers {} users, expected {}", self.assignment.len(), dims.total_users()));
            return out;
        }
        if let Some(a) = self.assignment.iter().find(|a| a.base >= self.bases.len()) {
            out.push(format!("pilot assignment refers to missing base {}", a.base));
            return out;
        }
        if self.bases.iter().any(|b| b.len() != self.length) {
            out.push("pilot base sequence of wrong length".into());
            return out;
        }
        for u in 0..self.assignment.len() {
            let p = power.get(u).copied().unwrap_or(0.0);
            let peak = self.sequence(u).iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
            if !peak.is_finite() || peak > p * (1.0 + 1e-9) + f64::MIN_POSITIVE {
                out.push(format!("pilot of user {u} has per-symbol power {peak} above its cap {p}"));
            }
        }
        let (l_cells, k_users) = (dims.cells, dims.users);
        match self.kind {
            PilotKind::SpatialDft => {
                for l in 0..l_cells {
                    for k in 0..k_users {
                        for m in k + 1..k_users {
                            let (a, b) = (self.sequence(l * k_users + k), self.sequence(l * k_users + m));
                            let ip: C64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
                            let na = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                            let nb = b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                            if ip.norm() > 1e-12 * na * nb {
                                out.push(format!("spatial pilots of users {k} and {m} in cell {l} are not orthogonal"));
                            }
                        }
                    }
                }
            }
            PilotKind::Temporal => {
                for l in 0..l_cells {
                    let mut used = vec![false; self.length];
                    for k in 0..k_users {
                        let seq = self.sequence(l * k_users + k);
                        let nz: Vec<usize> = (0..self.length).filter(|&i| seq[i] != C64::new(0.0, 0.0)).collect();
                        if nz.len() != 1 {
                            out.push(format!("temporal pilot of user {k} in cell {l} has {} nonzero entries", nz.len()));
                        } else if used[nz[0]] {
                            out.push(format!("temporal pilots in cell {l} collide at channel use {}", nz[0] + 1));
                        } else {
                            used[nz[0]] = true;
                        }
                    }
                }
            }
            PilotKind::Custom => {}
        }
        out
    }
}

/// Builds spatial-DFT or temporal pilots with sector-indexed reuse: user `k`
/// of every cell gets the same base sequence.
pub fn build_pilot_book(kind: PilotKind, dims: &Dimensions, power: &[f64]) -> Result<PilotBook> {
    let (b, k_users) = (dims.pilot_len, dims.users);
    if b < k_users {
        return Err(Error::InvalidConfig(format!("pilot length {b} is shorter than {k_users} users per cell")));
    }
    if power.len() != dims.total_users() {
        return Err(Error::InvalidConfig(format!("power vector has {} entries, expected {}", power.len(), dims.total_users())));
    }
    let bases: Vec<Vec<C64>> = match kind {
        PilotKind::SpatialDft => (0..k_users)
            .map(|m| {
                let col = m % b;
                (0..b).map(|i| C64::from_polar(1.0, -2.0 * PI * (i * col) as f64 / b as f64)).collect()
            })
            .collect(),
        PilotKind::Temporal => (0..k_users)
            .map(|m| (0..b).map(|i| if i == m { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }).collect())
            .collect(),
        PilotKind::Custom => {
            return Err(Error::Unsupported("custom pilots must be supplied through PilotBook::custom".into()));
        }
    };
    let assignment = (0..dims.total_users())
        .map(|u| PilotAssignment { base: u % k_users, amplitude: power[u].max(0.0).sqrt() })
        .collect();
    Ok(PilotBook { kind, length: b, bases, assignment })
}

/// A validated configuration with the noise variance normalized to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub stats: NetworkStats,
    pub book: PilotBook,
    pub hw: HardwareProfile,
}

impl SystemConfig {
    pub fn dims(&self) -> &Dimensions {
        &self.stats.dims
    }

    /// Same configuration with a different hardware profile.
    pub fn with_hardware(&self, hw: HardwareProfile) -> Result<Self> {
        hw.check()?;
        Ok(Self { hw, ..self.clone() })
    }

    pub fn with_antennas(&self, n: usize) -> Self {
        let mut out = self.clone();
        out.stats.dims.antennas = n;
        out
    }
}

/// Checks every invariant and returns the configuration scaled so that
/// `sigma2 = 1`: powers are divided by `sigma2` and pilot amplitudes by
/// `sqrt(sigma2)`. All SINRs are unchanged by this scaling.
pub fn validate(stats: &NetworkStats, book: &PilotBook, hw: &HardwareProfile) -> Result<SystemConfig> {
    let mut problems = stats.violations();
    if problems.is_empty() {
        problems.extend(book.violations(&stats.dims, &stats.power));
    }
    problems.extend(hw.violations());
    if !problems.is_empty() {
        return Err(Error::Validation(problems));
    }
    let s = stats.sigma2;
    let mut stats = stats.clone();
    stats.power.iter_mut().for_each(|p| *p /= s);
    stats.sigma2 = 1.0;
    let mut book = book.clone();
    book.assignment.iter_mut().for_each(|a| a.amplitude /= s.sqrt());
    Ok(SystemConfig { stats, book, hw: *hw })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(l: usize, k: usize, b: usize) -> Dimensions {
        Dimensions::new(l, k, 4, b, 20).unwrap()
    }

    #[test]
    fn dft_pilots_two_users() {
        let d = dims(1, 2, 2);
        let book = build_pilot_book(PilotKind::SpatialDft, &d, &[1.0, 1.0]).unwrap();
        let (a, b) = (book.sequence(0), book.sequence(1));
        let ip: C64 = a.iter().zip(&b).map(|(x, y)| x.conj() * y).sum();
        assert!(ip.norm() < 1e-15);
        for z in a.iter().chain(&b) {
            assert!((z.norm_sqr() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn temporal_pilots_two_users() {
        let d = dims(1, 2, 2);
        let book = build_pilot_book(PilotKind::Temporal, &d, &[1.0, 1.0]).unwrap();
        assert_eq!(book.sequence(0), vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        assert_eq!(book.sequence(1), vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        // 1/B of the spatial energy
        let spatial = build_pilot_book(PilotKind::SpatialDft, &d, &[1.0, 1.0]).unwrap();
        assert!((spatial.energy(0) / book.energy(0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dft_pilots_reused_across_sixteen_cells() {
        let d = Dimensions::new(16, 8, 10, 8, 500).unwrap();
        let p = vec![3.0; d.total_users()];
        let book = build_pilot_book(PilotKind::SpatialDft, &d, &p).unwrap();
        for k in 0..8 {
            for m in 0..8 {
                let ip: C64 = book.sequence(k).iter().zip(book.sequence(m)).map(|(x, y)| x.conj() * y).sum();
                let expect = if k == m { 24.0 } else { 0.0 };
                assert!((ip - C64::new(expect, 0.0)).norm() < 1e-12 * 24.0);
            }
        }
        for l in 0..16 {
            for k in 0..8 {
                assert_eq!(book.sequence(l * 8 + k), book.sequence(k));
                assert_eq!(book.reusers(l * 8 + k).len(), 15);
            }
        }
        let stats = NetworkStats { dims: d, lambda: vec![1.0; 16 * 128], power: p, sigma2: 1.0 };
        assert!(validate(&stats, &book, &HardwareProfile::ideal()).is_ok());
    }

    #[test]
    fn pilot_book_errors() {
        let d = Dimensions { cells: 1, users: 3, antennas: 1, pilot_len: 2, coherence: 5 };
        assert!(matches!(build_pilot_book(PilotKind::SpatialDft, &d, &[1.0; 3]), Err(Error::InvalidConfig(_))));
        let d = dims(1, 2, 2);
        assert!(matches!(build_pilot_book(PilotKind::Custom, &d, &[1.0; 2]), Err(Error::Unsupported(_))));
        assert!(matches!("walsh".parse::<PilotKind>(), Err(Error::Unsupported(_))));
    }

    #[test]
    fn fewer_users_than_pilot_length_uses_first_columns() {
        let d = dims(2, 2, 4);
        let book = build_pilot_book(PilotKind::SpatialDft, &d, &[1.0; 4]).unwrap();
        assert!(book.sequence(0).iter().all(|z| (*z - C64::new(1.0, 0.0)).norm() < 1e-15));
        assert!((book.sequence(1)[1] - C64::new(0.0, -1.0)).norm() < 1e-15);
    }

    fn small_stats() -> (NetworkStats, PilotBook) {
        let d = dims(2, 2, 2);
        let p = vec![2.0, 2.0, 4.0, 4.0];
        let book = build_pilot_book(PilotKind::SpatialDft, &d, &p).unwrap();
        let stats = NetworkStats { dims: d, lambda: (1..=8).map(|x| x as f64 * 0.1).collect(), power: p, sigma2: 0.5 };
        (stats, book)
    }

    #[test]
    fn validate_normalizes_noise() {
        let (stats, book) = small_stats();
        let cfg = validate(&stats, &book, &HardwareProfile::ideal()).unwrap();
        assert_eq!(cfg.stats.sigma2, 1.0);
        assert_eq!(cfg.stats.power, vec![4.0, 4.0, 8.0, 8.0]);
        assert!((cfg.book.sequence(2)[1].norm_sqr() - 8.0).abs() < 1e-12);
        assert_eq!(cfg.stats.lambda, stats.lambda);
    }

    #[test]
    fn validate_reports_violations() {
        let (mut stats, book) = small_stats();
        stats.lambda[3] = 0.0;
        let err = validate(&stats, &book, &HardwareProfile::ideal()).unwrap_err();
        assert!(err.to_string().contains("lambda[0][1][1]"), "{err}");

        let (stats, book) = small_stats();
        let hw = HardwareProfile { delta: 0.0, kappa: 0.0, xi: 0.5, rule: ProfileRule::Simulation };
        assert!(matches!(validate(&stats, &book, &hw), Err(Error::Validation(_))));
        let relaxed = HardwareProfile { rule: ProfileRule::Analysis, ..hw };
        assert!(validate(&stats, &book, &relaxed).is_ok());

        let (stats, mut book) = small_stats();
        book.assignment[0].amplitude = 10.0;
        let err = validate(&stats, &book, &HardwareProfile::ideal()).unwrap_err();
        assert!(err.to_string().contains("per-symbol power"));
    }

    #[test]
    fn custom_book_detects_reuse() {
        let d = dims(2, 1, 2);
        let s = vec![C64::new(1.0, 0.0), C64::new(0.0, 1.0)];
        let book = PilotBook::custom(&d, vec![s.clone(), s]).unwrap();
        assert_eq!(book.bases.len(), 1);
        assert_eq!(book.reusers(0), vec![1]);
    }
}

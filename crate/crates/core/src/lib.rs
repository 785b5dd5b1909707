//! Uplink massive MIMO with non-ideal base-station hardware.
//!
//! Channel estimation under phase drift, distortion noise and noise
//! amplification, closed-form MRC rates with their large-array limit and
//! hardware scaling law, Monte Carlo evaluation of MRC and approximate MMSE
//! receive filters, and a wrap-around multi-cell scenario generator.

pub mod error;
pub mod estimation;
pub mod linalg;
pub mod montecarlo;
pub mod model;
pub mod rates;
pub mod rng;
pub mod scenario;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
pub use linalg::C64;
pub use model::{
    build_pilot_book, validate, Dimensions, HardwareProfile, NetworkStats, PilotAssignment, PilotBook, PilotKind,
    ProfileRule, ScalingExponents, SystemConfig,
};

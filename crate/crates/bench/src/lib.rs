//! Fixtures shared by the benchmarks.

use hwmimo_core::scenario::{build_scenario, ScenarioParams};
use hwmimo_core::{validate, HardwareProfile, SystemConfig};

/// The default 16-cell scenario with the given array size and hardware.
pub fn default_network(antennas: usize, hw: HardwareProfile) -> SystemConfig {
    let scenario = build_scenario(&ScenarioParams { seed: 7, antennas, ..ScenarioParams::default() })
        .expect("default scenario is valid");
    validate(&scenario.stats, &scenario.book, &hw).expect("default scenario validates")
}

pub fn impaired() -> HardwareProfile {
    HardwareProfile::new(4.7e-5, 0.05, 3.0).expect("valid profile")
}

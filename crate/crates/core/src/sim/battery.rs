use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const DESIRED_LEVEL: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub company: usize,
    /// Internal network node index.
    pub node: usize,
    /// Current battery level in percent.
    pub battery: f64,
    /// Battery level at the start of the period.
    pub start_battery: f64,
    pub max_range_km: f64,
    /// Charging threshold in percent.
    pub threshold: f64,
    /// Charge units per percent of battery.
    pub beta: f64,
}

impl VehicleState {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=100.0).contains(&self.battery) || !(0.0..=100.0).contains(&self.start_battery) {
            return Err(Error::InvalidParameter(format!(
                "battery level {} out of [0, 100]",
                self.battery
            )));
        }
        if !(self.max_range_km > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "max range {} must be positive",
                self.max_range_km
            )));
        }
        Ok(())
    }

    /// Percent of battery used per km.
    pub fn rate(&self) -> f64 {
        100.0 / self.max_range_km
    }

    pub fn needs_charge(&self) -> bool {
        self.battery < self.threshold
    }

    /// Battery left on arrival after driving `km`.
    pub fn level_after(&self, km: f64) -> f64 {
        self.battery - self.rate() * km
    }

    /// Whether a station `km` away can be reached on the current battery.
    pub fn can_reach(&self, km: f64) -> bool {
        self.level_after(km) > 0.0
    }
}

/// Drives at `speed` km/h for `hours`, draining linearly and flooring at 0.
pub fn discharge_step(state: &VehicleState, speed: f64, hours: f64) -> VehicleState {
    let mut next = state.clone();
    drain(&mut next, speed * hours);
    next
}

/// Drains the battery for `km` driven.
pub fn drain(state: &mut VehicleState, km: f64) {
    state.battery = (state.battery - state.rate() * km).max(0.0);
}

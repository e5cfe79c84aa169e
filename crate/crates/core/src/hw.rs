use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accelerator configuration and resource budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HwConfig {
    /// Input-channel parallelism.
    pub ti: u32,
    /// Output-channel parallelism; equal to `ti`.
    pub to: u32,
    /// Activation/weight bit width.
    pub qa: u32,
    /// Partial-sum bit width.
    pub qs: u32,
    pub freq_hz: f64,
    /// Shared MAC units (each performs two multiplications per cycle on normal convolution).
    pub n_mac: u32,
    /// MAC budget (alpha).
    pub mac_budget: u32,
    /// BRAM18K budget (beta).
    pub bram_budget: u32,
    pub bus_bytes_per_cycle: u32,
    pub group_setup_cycles: u64,
    pub dram_capacity: u64,
}

impl Default for HwConfig {
    fn default() -> Self {
        HwConfig {
            ti: 32,
            to: 32,
            qa: 8,
            qs: 32,
            freq_hz: 200e6,
            n_mac: 2048,
            mac_budget: 5520,
            bram_budget: 4320,
            bus_bytes_per_cycle: 64,
            group_setup_cycles: 100,
            dram_capacity: 1 << 32,
        }
    }
}

impl HwConfig {
    /// Configuration with `ti = to = t` and the matching shared-MAC count.
    pub fn with_parallelism(t: u32) -> Self {
        HwConfig { ti: t, to: t, n_mac: 2 * t * t, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ti == 0 || self.ti != self.to {
            return Err(Error::InvalidArgument(format!("ti ({}) must equal to ({}) and be positive", self.ti, self.to)));
        }
        if self.qa == 0 || self.qa % 8 != 0 || self.qs < self.qa {
            return Err(Error::InvalidArgument(format!("need qa multiple of 8 and qs >= qa (qa {}, qs {})", self.qa, self.qs)));
        }
        if self.bus_bytes_per_cycle == 0 || self.freq_hz <= 0.0 {
            return Err(Error::InvalidArgument("bus width and frequency must be positive".into()));
        }
        Ok(())
    }

    /// Bytes per activation/weight element.
    pub fn act_bytes(&self) -> u64 {
        (self.qa / 8) as u64
    }

    /// Bytes across all banks of one feature-buffer word.
    pub fn bank_row_bytes(&self) -> u64 {
        self.ti as u64 * self.act_bytes()
    }

    /// Peak throughput in GOPS: four INT8 ops per shared MAC per cycle.
    pub fn peak_gops(&self) -> f64 {
        4.0 * self.freq_hz * self.n_mac as f64 / 1e9
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid_and_matches_reference_array() {
        let hw = HwConfig::default();
        hw.validate().unwrap();
        assert_eq!(hw.n_mac, 2 * hw.ti * hw.to);
        assert_eq!(HwConfig::with_parallelism(32), hw);
    }

    #[test]
    fn rejects_unequal_parallelism() {
        let hw = HwConfig { to: 16, ..Default::default() };
        assert!(hw.validate().is_err());
        let hw = HwConfig { qs: 4, ..Default::default() };
        assert!(hw.validate().is_err());
    }
}

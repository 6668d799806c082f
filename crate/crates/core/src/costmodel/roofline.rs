use serde::{Deserialize, Serialize};

use super::CostLedger;
use crate::error::{Error, Result};

/// A workload placed on the roofline of a machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RooflinePoint {
    /// MACs per byte of counted DRAM traffic; infinite when no traffic is counted.
    pub operational_intensity: f64,
    /// `min(peak, bandwidth · intensity)` in ops per second.
    pub attainable_performance: f64,
    pub peak_ops_per_sec: f64,
    pub bandwidth_bytes_per_sec: f64,
}

impl RooflinePoint {
    /// Intensity at which the bandwidth slope meets the compute ceiling.
    pub fn knee(&self) -> f64 {
        self.peak_ops_per_sec / self.bandwidth_bytes_per_sec
    }

    pub fn is_memory_bound(&self) -> bool {
        self.operational_intensity < self.knee()
    }
}

/// Attainable performance for a given intensity.
pub fn attainable(intensity: f64, peak: f64, bandwidth: f64) -> f64 {
    if intensity.is_infinite() {
        peak
    } else {
        peak.min(bandwidth * intensity)
    }
}

pub fn roofline(
    ledger: &CostLedger,
    peak_ops_per_sec: f64,
    bandwidth_bytes_per_sec: f64,
) -> Result<RooflinePoint> {
    for (name, v) in [
        ("peak", peak_ops_per_sec),
        ("bandwidth", bandwidth_bytes_per_sec),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::Config(format!(
                "roofline {name} must be positive, got {v}"
            )));
        }
    }
    let bytes = ledger.total_dram_bits() / 8.0;
    let intensity = if bytes > 0.0 {
        ledger.macs() / bytes
    } else {
        f64::INFINITY
    };
    Ok(RooflinePoint {
        operational_intensity: intensity,
        attainable_performance: attainable(intensity, peak_ops_per_sec, bandwidth_bytes_per_sec),
        peak_ops_per_sec,
        bandwidth_bytes_per_sec,
    })
}

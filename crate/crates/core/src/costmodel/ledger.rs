use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{TrafficProfile, UnitCostTable};
use crate::error::{Error, Result};
use crate::formats::NumberFormat;

/// Role of a tensor moving between the processor and DRAM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorClass {
    /// Forward outputs passed from one GEMM to the next.
    Activation,
    Weight,
    /// Forward inputs kept for the backward pass.
    Stash,
    /// Activation gradients handed from one layer to the one below.
    ActGrad,
    WeightGrad,
    Optimizer,
}

impl TensorClass {
    pub const ALL: [TensorClass; 6] = [
        TensorClass::Activation,
        TensorClass::Weight,
        TensorClass::Stash,
        TensorClass::ActGrad,
        TensorClass::WeightGrad,
        TensorClass::Optimizer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TensorClass::Activation => "activation",
            TensorClass::Weight => "weight",
            TensorClass::Stash => "stash",
            TensorClass::ActGrad => "act-grad",
            TensorClass::WeightGrad => "weight-grad",
            TensorClass::Optimizer => "optimizer",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TensorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Read,
    Write,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Read => "read",
            Direction::Write => "write",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Traffic {
    bits: f64,
    transfers: u64,
}

/// Accumulated arithmetic and DRAM cost.
///
/// `macs` counts raw multiply-accumulates; `mac_units` weighs each MAC by its
/// operand formats, with a fixed-point 32×32 MAC worth exactly one unit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostLedger {
    macs: f64,
    mac_units: f64,
    gemms: u64,
    dram: BTreeMap<(TensorClass, Direction), Traffic>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Charges one `M×K · K×N` GEMM whose operands are held in `a` and `b`.
    pub fn record_gemm(
        &mut self,
        m: usize,
        n: usize,
        k: usize,
        a: NumberFormat,
        b: NumberFormat,
        table: &UnitCostTable,
    ) -> Result<()> {
        if m == 0 || n == 0 || k == 0 {
            return Err(Error::Contract(format!(
                "gemm dims must be positive, got {m}x{n}x{k}"
            )));
        }
        let cost = table.mac_cost(a, b)?;
        let count = (m * n * k) as f64;
        self.macs += count;
        self.mac_units += count * cost;
        self.gemms += 1;
        Ok(())
    }

    /// Charges a transfer of `n` elements stored in `fmt`, if the profile
    /// counts this class and direction.
    pub fn record_dram(
        &mut self,
        class: TensorClass,
        direction: Direction,
        n: usize,
        fmt: NumberFormat,
        profile: &TrafficProfile,
        table: &UnitCostTable,
    ) {
        if !profile.includes(class, direction) {
            return;
        }
        let entry = self.dram.entry((class, direction)).or_default();
        entry.bits += table.storage_bits(fmt, n as u64);
        entry.transfers += 1;
    }

    pub fn macs(&self) -> f64 {
        self.macs
    }

    pub fn mac_units(&self) -> f64 {
        self.mac_units
    }

    pub fn gemm_count(&self) -> u64 {
        self.gemms
    }

    pub fn dram_bits(&self, class: TensorClass, direction: Direction) -> f64 {
        self.dram.get(&(class, direction)).map_or(0.0, |t| t.bits)
    }

    pub fn transfer_count(&self, class: TensorClass, direction: Direction) -> u64 {
        self.dram
            .get(&(class, direction))
            .map_or(0, |t| t.transfers)
    }

    pub fn total_dram_bits(&self) -> f64 {
        self.dram.values().fold(0.0, |acc, t| acc + t.bits)
    }

    pub fn is_empty(&self) -> bool {
        self.gemms == 0 && self.dram.values().all(|t| t.transfers == 0)
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &CostLedger) {
        self.macs += other.macs;
        self.mac_units += other.mac_units;
        self.gemms += other.gemms;
        for (key, t) in &other.dram {
            let e = self.dram.entry(*key).or_default();
            e.bits += t.bits;
            e.transfers += t.transfers;
        }
    }

    /// The ledger of `factor` repetitions of this one.
    pub fn repeated(&self, factor: u64) -> CostLedger {
        let f = factor as f64;
        CostLedger {
            macs: self.macs * f,
            mac_units: self.mac_units * f,
            gemms: self.gemms * factor,
            dram: self
                .dram
                .iter()
                .map(|(k, t)| {
                    (
                        *k,
                        Traffic {
                            bits: t.bits * f,
                            transfers: t.transfers * factor,
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        LedgerSnapshot {
            macs: self.macs,
            mac_units: self.mac_units,
            gemms: self.gemms,
            dram_bits_total: self.total_dram_bits(),
            dram_bits: self
                .dram
                .iter()
                .map(|((c, d), t)| (format!("{c}.{d}"), t.bits))
                .collect(),
        }
    }
}

/// Serializable view of a ledger for run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub macs: f64,
    pub mac_units: f64,
    pub gemms: u64,
    pub dram_bits_total: f64,
    pub dram_bits: BTreeMap<String, f64>,
}

/// Cost ratios of `ledger` against `baseline`: `(arith, dram)`.
pub fn normalize(ledger: &CostLedger, baseline: &CostLedger) -> Result<(f64, f64)> {
    let (base_arith, base_dram) = (baseline.mac_units(), baseline.total_dram_bits());
    if base_arith <= 0.0 || base_dram <= 0.0 {
        return Err(Error::Config(format!(
            "baseline ledger has zero cost (arith {base_arith}, dram {base_dram})"
        )));
    }
    Ok((
        ledger.mac_units() / base_arith,
        ledger.total_dram_bits() / base_dram,
    ))
}

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{self, FormatKind, NumberFormat};

/// Per-MAC arithmetic cost and per-element storage cost of each format.
///
/// Fixed-point MACs cost `a·b/1024`, so a 32×32 fixed MAC is one unit. BFP
/// costs come from a per-width diagonal; mixed widths use the geometric mean
/// of the two diagonal entries. The reference format is priced as a 32-bit
/// member of whichever family it is paired with, or at `reference_cost` when
/// both operands are reference.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCostTable {
    bfp_mac: BTreeMap<u32, f64>,
    bfp_storage: BTreeMap<u32, f64>,
    reference_cost: f64,
}

/// BFP MAC cost per width, relative to a 32-bit fixed-point MAC. The 32-
/// and 16-bit entries are hardware ratios; the narrow entries are fitted to
/// the stashing and adaptive-schedule cost targets.
const DEFAULT_BFP_MAC: [(u32, f64); 5] =
    [(2, 0.0042), (4, 0.02), (8, 0.06), (16, 0.18), (32, 0.56)];

/// Bits per element, exponent included. Wide BFP carries about four bits of
/// overhead beyond the shared exponent in the hardware this table models.
const DEFAULT_BFP_STORAGE: [(u32, f64); 3] = [(4, 8.0), (16, 20.16), (32, 36.16)];

impl Default for UnitCostTable {
    fn default() -> Self {
        UnitCostTable {
            bfp_mac: DEFAULT_BFP_MAC.into_iter().collect(),
            bfp_storage: DEFAULT_BFP_STORAGE.into_iter().collect(),
            reference_cost: 1.0,
        }
    }
}

impl UnitCostTable {
    /// Default MAC costs with plain formula storage (no BFP overrides).
    pub fn uncalibrated() -> Self {
        UnitCostTable {
            bfp_storage: BTreeMap::new(),
            ..Self::default()
        }
    }

    pub fn new(
        bfp_mac: BTreeMap<u32, f64>,
        bfp_storage: BTreeMap<u32, f64>,
        reference_cost: f64,
    ) -> Result<Self> {
        let bad = |v: f64| !(v.is_finite() && v > 0.0);
        if bad(reference_cost) {
            return Err(Error::Config(format!(
                "reference MAC cost must be positive, got {reference_cost}"
            )));
        }
        for (bits, c) in &bfp_mac {
            if bad(*c) {
                return Err(Error::Config(format!(
                    "bfp:{bits} MAC cost must be positive, got {c}"
                )));
            }
        }
        for (bits, s) in &bfp_storage {
            if bad(*s) {
                return Err(Error::Config(format!(
                    "bfp:{bits} storage must be positive, got {s}"
                )));
            }
        }
        Ok(UnitCostTable {
            bfp_mac,
            bfp_storage,
            reference_cost,
        })
    }

    pub fn bfp_mac_diagonal(&self) -> &BTreeMap<u32, f64> {
        &self.bfp_mac
    }

    pub fn bfp_storage_overrides(&self) -> &BTreeMap<u32, f64> {
        &self.bfp_storage
    }

    fn bfp_diag(&self, bits: u32) -> Result<f64> {
        self.bfp_mac.get(&bits).copied().ok_or_else(|| {
            Error::Config(format!("no MAC cost for bfp:{bits} in the unit-cost table"))
        })
    }

    /// Cost of one MAC between operands held in `a` and `b`.
    pub fn mac_cost(&self, a: NumberFormat, b: NumberFormat) -> Result<f64> {
        use FormatKind::*;
        let family = match (a.kind(), b.kind()) {
            (Reference, Reference) => return Ok(self.reference_cost),
            (Fixed, Bfp) | (Bfp, Fixed) => {
                return Err(Error::Config(format!("no MAC cost between {a} and {b}")))
            }
            (Reference, k) | (k, _) => k,
        };
        let (ba, bb) = (a.element_bits(), b.element_bits());
        match family {
            Fixed => Ok(f64::from(ba) * f64::from(bb) / 1024.0),
            _ if ba == bb => self.bfp_diag(ba),
            _ => Ok((self.bfp_diag(ba)? * self.bfp_diag(bb)?).sqrt()),
        }
    }

    /// Storage cost in bits of `n` elements held in `fmt`.
    pub fn storage_bits(&self, fmt: NumberFormat, n: u64) -> f64 {
        match (fmt.kind(), self.bfp_storage.get(&fmt.element_bits())) {
            (FormatKind::Bfp, Some(per_element)) => per_element * n as f64,
            _ => formats::storage_bits(fmt, n) as f64,
        }
    }

    pub fn to_spec(&self) -> UnitCostTableSpec {
        let keyed = |m: &BTreeMap<u32, f64>| m.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        UnitCostTableSpec {
            reference_cost: Some(self.reference_cost),
            bfp_mac: keyed(&self.bfp_mac),
            bfp_storage: keyed(&self.bfp_storage),
        }
    }
}

/// Text form of a [`UnitCostTable`]. Keys are element widths.
///
/// ```toml
/// reference_cost = 1.0
/// [bfp_mac]
/// 4 = 0.02
/// 16 = 0.18
/// [bfp_storage]
/// 16 = 20.16
/// ```
///
/// Entries given here replace the matching defaults; absent ones keep them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitCostTableSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_cost: Option<f64>,
    #[serde(default)]
    pub bfp_mac: BTreeMap<String, f64>,
    #[serde(default)]
    pub bfp_storage: BTreeMap<String, f64>,
}

impl UnitCostTableSpec {
    /// Merges the overrides onto the built-in defaults.
    pub fn resolve(&self) -> Result<UnitCostTable> {
        let base = UnitCostTable::default();
        let merge = |mut into: BTreeMap<u32, f64>, from: &BTreeMap<String, f64>| -> Result<_> {
            for (k, v) in from {
                let bits: u32 = k
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("unit-cost key `{k}` is not a bit width")))?;
                into.insert(bits, *v);
            }
            Ok(into)
        };
        UnitCostTable::new(
            merge(base.bfp_mac, &self.bfp_mac)?,
            merge(base.bfp_storage, &self.bfp_storage)?,
            self.reference_cost.unwrap_or(base.reference_cost),
        )
    }
}

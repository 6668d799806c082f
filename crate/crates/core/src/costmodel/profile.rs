use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Direction, TensorClass};
use crate::error::{Error, Result};
use crate::formats::NumberFormat;
use crate::qtraining::PrecisionConfig;

/// Which format a tensor class is stored in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum WidthSource {
    Q0,
    Q1,
    Q2,
    Q3,
    Reference,
}

impl WidthSource {
    pub fn resolve(self, cfg: &PrecisionConfig) -> NumberFormat {
        match self {
            WidthSource::Q0 => cfg.q0(),
            WidthSource::Q1 => cfg.q1(),
            WidthSource::Q2 => cfg.q2(),
            WidthSource::Q3 => cfg.q3(),
            WidthSource::Reference => NumberFormat::reference(),
        }
    }
}

impl fmt::Display for WidthSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WidthSource::Q0 => "q0",
            WidthSource::Q1 => "q1",
            WidthSource::Q2 => "q2",
            WidthSource::Q3 => "q3",
            WidthSource::Reference => "ref",
        })
    }
}

impl FromStr for WidthSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "q0" => Ok(WidthSource::Q0),
            "q1" => Ok(WidthSource::Q1),
            "q2" => Ok(WidthSource::Q2),
            "q3" => Ok(WidthSource::Q3),
            "ref" | "reference" => Ok(WidthSource::Reference),
            other => Err(Error::Parse(format!("unknown width source `{other}`"))),
        }
    }
}

impl From<WidthSource> for String {
    fn from(w: WidthSource) -> String {
        w.to_string()
    }
}

impl TryFrom<String> for WidthSource {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Accounting rule for one tensor class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassRule {
    pub read: bool,
    pub write: bool,
    pub width: WidthSource,
}

/// Which transfers count toward DRAM totals, and at what width.
///
/// The default counts activation writes, weight reads, stash reads and
/// writes, and activation-gradient writes. Weight gradients and optimizer
/// state are left out. Under this profile a uniform fixed-point setup moves
/// exactly `bits/32` of the 32-bit traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrafficProfile {
    rules: [ClassRule; 6],
}

impl Default for TrafficProfile {
    fn default() -> Self {
        let rule = |read, write, width| ClassRule { read, write, width };
        TrafficProfile {
            rules: [
                rule(false, true, WidthSource::Q0),
                rule(true, false, WidthSource::Q0),
                rule(true, true, WidthSource::Q1),
                rule(false, true, WidthSource::Q3),
                rule(false, false, WidthSource::Reference),
                rule(false, false, WidthSource::Reference),
            ],
        }
    }
}

impl TrafficProfile {
    /// Builds a profile from rules in [`TensorClass::ALL`] order.
    pub fn new(rules: [ClassRule; 6]) -> Result<Self> {
        let p = TrafficProfile { rules };
        if p.rule(TensorClass::Stash).width != WidthSource::Q1 {
            return Err(Error::Config("stash traffic must use the q1 width".into()));
        }
        if p.rule(TensorClass::ActGrad).width != WidthSource::Q3 {
            return Err(Error::Config(
                "activation-gradient traffic must use the q3 width".into(),
            ));
        }
        Ok(p)
    }

    /// Counts every transfer of every class.
    pub fn everything() -> Self {
        let mut rules = Self::default().rules;
        for r in &mut rules {
            r.read = true;
            r.write = true;
        }
        TrafficProfile { rules }
    }

    pub fn rule(&self, class: TensorClass) -> ClassRule {
        self.rules[class.index()]
    }

    pub fn includes(&self, class: TensorClass, direction: Direction) -> bool {
        let r = self.rule(class);
        match direction {
            Direction::Read => r.read,
            Direction::Write => r.write,
        }
    }

    pub fn width(&self, class: TensorClass, cfg: &PrecisionConfig) -> NumberFormat {
        self.rule(class).width.resolve(cfg)
    }

    pub fn to_spec(&self) -> TrafficProfileSpec {
        TrafficProfileSpec(
            TensorClass::ALL
                .iter()
                .map(|c| (c.name().to_string(), self.rule(*c)))
                .collect(),
        )
    }
}

/// Text form of a [`TrafficProfile`]: one table per class name.
///
/// ```toml
/// [activation]
/// read = false
/// write = true
/// width = "q0"
/// ```
///
/// Classes not listed keep their default rule.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrafficProfileSpec(pub BTreeMap<String, ClassRule>);

impl TrafficProfileSpec {
    pub fn resolve(&self) -> Result<TrafficProfile> {
        let mut rules = TrafficProfile::default().rules;
        for (name, rule) in &self.0 {
            let class = TensorClass::ALL
                .iter()
                .find(|c| c.name() == name)
                .ok_or_else(|| Error::Config(format!("unknown tensor class `{name}`")))?;
            rules[class.index()] = *rule;
        }
        TrafficProfile::new(rules)
    }
}

//! Adaptive stashing-precision schedule: a monotone ladder of precision
//! setups, advanced one rung whenever validation loss stops improving.

use std::fmt;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::FormatKind;
use crate::qtraining::PrecisionConfig;

/// Smallest `q3` width the schedule may emit. Narrower activation gradients
/// make training fail.
pub const MIN_Q3_BITS: u32 = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleLadder {
    configs: Vec<PrecisionConfig>,
    patience: u32,
    min_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LadderViolation {
    /// Rung `rung` lowers `q{point}` relative to the rung before it.
    NotMonotone {
        rung: usize,
        point: usize,
        from: u32,
        to: u32,
    },
    Q3TooNarrow {
        rung: usize,
        bits: u32,
    },
}

impl fmt::Display for LadderViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LadderViolation::NotMonotone {
                rung,
                point,
                from,
                to,
            } => {
                write!(f, "rung {rung} lowers q{point} from {from} to {to} bits")
            }
            LadderViolation::Q3TooNarrow { rung, bits } => {
                write!(f, "rung {rung} has q3 = {bits} bits, below {MIN_Q3_BITS}")
            }
        }
    }
}

/// Lists every monotonicity and `q3` violation of a rung sequence.
pub fn validate_ladder(configs: &[PrecisionConfig]) -> Vec<LadderViolation> {
    let mut out = Vec::new();
    for (rung, cfg) in configs.iter().enumerate() {
        if rung > 0 {
            let prev = configs[rung - 1].bits();
            for (point, (&from, &to)) in prev.iter().zip(&cfg.bits()).enumerate() {
                if to < from {
                    out.push(LadderViolation::NotMonotone {
                        rung,
                        point,
                        from,
                        to,
                    });
                }
            }
        }
        let bits = cfg.q3().element_bits();
        if bits < MIN_Q3_BITS {
            out.push(LadderViolation::Q3TooNarrow { rung, bits });
        }
    }
    out
}

impl ScheduleLadder {
    pub fn new(configs: Vec<PrecisionConfig>, patience: u32, min_delta: f64) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::Config("schedule ladder has no rungs".into()));
        }
        if patience == 0 {
            return Err(Error::Config("schedule patience must be at least 1".into()));
        }
        if !(min_delta.is_finite() && min_delta >= 0.0) {
            return Err(Error::Config(format!(
                "min_delta must be non-negative, got {min_delta}"
            )));
        }
        let violations = validate_ladder(&configs);
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(Error::Config(format!(
                "invalid ladder: {}",
                list.join("; ")
            )));
        }
        Ok(ScheduleLadder {
            configs,
            patience,
            min_delta,
        })
    }

    /// `[2,2,2,16] → [4,4,4,16] → [16,4,4,16]`, patience 2, no minimum delta.
    pub fn default_for(family: FormatKind) -> Result<Self> {
        if family == FormatKind::Reference {
            return Err(Error::Config(
                "the default ladder needs a quantized family".into(),
            ));
        }
        let rungs = [[2, 2, 2, 16], [4, 4, 4, 16], [16, 4, 4, 16]]
            .into_iter()
            .map(|bits| PrecisionConfig::from_bits(family, bits))
            .collect::<Result<_>>()?;
        Self::new(rungs, 2, 0.0)
    }

    pub fn configs(&self) -> &[PrecisionConfig] {
        &self.configs
    }

    pub fn patience(&self) -> u32 {
        self.patience
    }

    pub fn min_delta(&self) -> f64 {
        self.min_delta
    }
}

/// Mutable position on a ladder. Owned by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub rung: usize,
    pub best_valid_loss: f64,
    pub stale_evals: u32,
    /// `(step, rung)` at the start and at every advance.
    pub trace: Vec<(u64, usize)>,
}

impl Default for ScheduleState {
    fn default() -> Self {
        ScheduleState {
            rung: 0,
            best_valid_loss: f64::INFINITY,
            stale_evals: 0,
            trace: vec![(0, 0)],
        }
    }
}

impl ScheduleState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current<'l>(&self, ladder: &'l ScheduleLadder) -> &'l PrecisionConfig {
        &ladder.configs[self.rung]
    }

    /// Feeds one validation loss observed at `step`; returns the setup to
    /// train with next. Non-finite losses count as no improvement.
    pub fn observe_validation(
        &mut self,
        ladder: &ScheduleLadder,
        step: u64,
        loss: f64,
    ) -> PrecisionConfig {
        if !loss.is_finite() {
            warn!("non-finite validation loss at step {step}; counted as a plateau");
        }
        if loss.is_finite() && loss < self.best_valid_loss - ladder.min_delta {
            self.best_valid_loss = loss;
            self.stale_evals = 0;
        } else {
            self.stale_evals += 1;
            if self.stale_evals >= ladder.patience && self.rung + 1 < ladder.configs.len() {
                self.rung += 1;
                self.stale_evals = 0;
                self.trace.push((step, self.rung));
            }
        }
        ladder.configs[self.rung]
    }
}

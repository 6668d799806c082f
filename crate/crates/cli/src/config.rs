//! Declarative run configuration, read from TOML.
//!
//! ```toml
//! method = "stashing-bfp"
//! setup = "16,4,4,16"
//! seed = 3
//!
//! [training]
//! epochs = 30
//!
//! [ladder]            # dsq only
//! family = "bfp"
//! rungs = ["2,2,2,16", "4,4,4,16", "16,4,4,16"]
//! patience = 2
//! ```
//!
//! Every key is optional. Paths to a unit-cost table or traffic profile are
//! resolved against the directory of the config file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dsq_core::costmodel::{TrafficProfile, TrafficProfileSpec, UnitCostTable, UnitCostTableSpec};
use dsq_core::formats::FormatKind;
use dsq_core::qtraining::{ModelSpec, PrecisionConfig, Schedule, TaskSpec, TrainConfig};
use dsq_core::scheduler::ScheduleLadder;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Training method, as named in cost tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    FloatingPoint,
    Fixed,
    Bfp,
    StashingFixed,
    StashingBfp,
    Dsq,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::FloatingPoint,
        Method::Fixed,
        Method::Bfp,
        Method::StashingFixed,
        Method::StashingBfp,
        Method::Dsq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FloatingPoint => "floating-point",
            Method::Fixed => "fixed",
            Method::Bfp => "bfp",
            Method::StashingFixed => "stashing-fixed",
            Method::StashingBfp => "stashing-bfp",
            Method::Dsq => "dsq",
        }
    }

    /// Format family of a static setup; `None` for dsq.
    pub fn family(self) -> Option<FormatKind> {
        match self {
            Method::FloatingPoint => Some(FormatKind::Reference),
            Method::Fixed | Method::StashingFixed => Some(FormatKind::Fixed),
            Method::Bfp | Method::StashingBfp => Some(FormatKind::Bfp),
            Method::Dsq => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                CliError::Config(format!(
                    "unknown method `{s}` (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Parses a static setup for `method`: `16,4,4,16`, or explicit formats such
/// as `bfp:16,bfp:4,bfp:4,bfp:16`.
pub fn parse_setup(method: Method, setup: &str) -> Result<PrecisionConfig> {
    let Some(family) = method.family() else {
        return Err(CliError::Config(
            "dsq takes a ladder, not a static setup".into(),
        ));
    };
    let cfg = if setup.contains(':') || setup.contains("ref") {
        setup.parse::<PrecisionConfig>()?
    } else if family == FormatKind::Reference {
        let cfg = PrecisionConfig::parse_bits(FormatKind::Fixed, setup)?;
        if cfg.bits() != [32; 4] {
            return Err(CliError::Config(format!(
                "floating-point runs are 32-bit, got `{setup}`"
            )));
        }
        PrecisionConfig::reference()
    } else {
        PrecisionConfig::parse_bits(family, setup)?
    };
    if ![family, FormatKind::Reference].contains(&cfg.family()) {
        return Err(CliError::Config(format!(
            "setup `{setup}` is not a {method} setup"
        )));
    }
    Ok(cfg)
}

/// Rungs of an adaptive schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSpec {
    #[serde(default = "default_ladder_family")]
    pub family: FormatKind,
    pub rungs: Vec<String>,
    #[serde(default = "default_patience")]
    pub patience: u32,
    #[serde(default)]
    pub min_delta: f64,
}

fn default_ladder_family() -> FormatKind {
    FormatKind::Bfp
}

fn default_patience() -> u32 {
    2
}

impl LadderSpec {
    pub fn resolve(&self) -> Result<ScheduleLadder> {
        let rungs = self
            .rungs
            .iter()
            .map(|r| {
                if r.contains(':') {
                    r.parse::<PrecisionConfig>()
                } else {
                    PrecisionConfig::parse_bits(self.family, r)
                }
            })
            .collect::<dsq_core::Result<Vec<_>>>()?;
        Ok(ScheduleLadder::new(rungs, self.patience, self.min_delta)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_toml(path)
    }
}

/// Overrides of the toy training defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: Option<usize>,
    pub steps_per_epoch: Option<usize>,
    pub base_lr: Option<f64>,
    pub warmup: Option<u64>,
    pub label_smoothing: Option<f64>,
    pub dropout: Option<f64>,
    /// 0 scores the whole validation split.
    pub eval_samples: Option<usize>,
    pub stop_on_failure: Option<bool>,
}

/// One requested row of a cost table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowSpec {
    pub method: Method,
    pub setup: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimateSection {
    /// Model to cost; the six-layer transformer when absent.
    pub model: Option<ModelSpec>,
    pub steps: u64,
    /// Rows to emit. When absent: the run's own method if one is set,
    /// otherwise the full comparison table.
    pub rows: Option<Vec<RowSpec>>,
    /// `(arith, dram)` ratios the dsq phase durations are fitted to.
    pub dsq_target: [f64; 2],
}

impl Default for EstimateSection {
    fn default() -> Self {
        EstimateSection {
            model: None,
            steps: 10_000,
            rows: None,
            dsq_target: [0.012, 0.20],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Falls back to the top-level method.
    pub method: Option<Method>,
    pub setups: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    /// Run directories holding `metrics.jsonl`; when empty, the output
    /// directory and its immediate subdirectories are scanned.
    pub runs: Vec<PathBuf>,
    /// MACs per second.
    pub peak_ops_per_sec: f64,
    pub bandwidth_bytes_per_sec: f64,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            runs: Vec::new(),
            peak_ops_per_sec: 1e14,
            bandwidth_bytes_per_sec: 1e12,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub method: Option<Method>,
    pub setup: Option<String>,
    pub ladder: Option<LadderSpec>,
    pub seed: Option<u64>,
    pub training: TrainingSection,
    pub task: Option<TaskSpec>,
    /// Model to train; the toy transformer when absent.
    pub model: Option<ModelSpec>,
    /// Unit-cost table overrides (TOML).
    pub table: Option<PathBuf>,
    /// Traffic profile overrides (TOML).
    pub profile: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub estimate: EstimateSection,
    pub sweep: SweepSection,
    pub report: ReportSection,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// What a training run executes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedMethod {
    pub method: Method,
    pub schedule: Schedule,
}

impl ResolvedMethod {
    /// `[16,4,4,16]` for a static setup, rungs joined by `->` for a ladder.
    pub fn setup_label(&self) -> String {
        match &self.schedule {
            Schedule::Static(c) => c.setup_label(),
            Schedule::Ladder(l) => ladder_label(l),
        }
    }
}

pub fn ladder_label(ladder: &ScheduleLadder) -> String {
    let labels: Vec<String> = ladder
        .configs()
        .iter()
        .map(PrecisionConfig::setup_label)
        .collect();
    labels.join("->")
}

pub const DEFAULT_SEED: u64 = 1;

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|source| CliError::Toml {
        path: path.to_path_buf(),
        source,
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_toml(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|source| CliError::Toml {
            path: PathBuf::from("<inline>"),
            source,
        })
    }

    fn relative(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn unit_costs(&self) -> Result<UnitCostTable> {
        match &self.table {
            None => Ok(UnitCostTable::default()),
            Some(p) => Ok(read_toml::<UnitCostTableSpec>(&self.relative(p))?.resolve()?),
        }
    }

    pub fn traffic_profile(&self) -> Result<TrafficProfile> {
        match &self.profile {
            None => Ok(TrafficProfile::default()),
            Some(p) => Ok(read_toml::<TrafficProfileSpec>(&self.relative(p))?.resolve()?),
        }
    }

    /// Resolves a method and its setup or ladder, rejecting mismatches.
    pub fn resolve_method(
        &self,
        method: Method,
        setup: Option<&str>,
        ladder: Option<&LadderSpec>,
    ) -> Result<ResolvedMethod> {
        let schedule = match (method, setup, ladder) {
            (Method::Dsq, Some(_), _) => {
                return Err(CliError::Config(
                    "dsq takes a ladder, not a static setup".into(),
                ))
            }
            (Method::Dsq, None, Some(l)) => Schedule::Ladder(l.resolve()?),
            (Method::Dsq, None, None) => {
                Schedule::Ladder(ScheduleLadder::default_for(FormatKind::Bfp)?)
            }
            (m, _, Some(_)) => {
                return Err(CliError::Config(format!(
                    "a ladder only applies to dsq, not {m}"
                )))
            }
            (Method::FloatingPoint, None, None) => Schedule::Static(PrecisionConfig::reference()),
            (m, None, None) => {
                return Err(CliError::Config(format!(
                    "method {m} needs a setup such as 16,16,16,16"
                )))
            }
            (m, Some(s), None) => Schedule::Static(parse_setup(m, s)?),
        };
        Ok(ResolvedMethod { method, schedule })
    }

    /// The configured method with its setup or ladder.
    pub fn method(&self) -> Result<ResolvedMethod> {
        let method = self
            .method
            .ok_or_else(|| CliError::Config("no method given".into()))?;
        self.resolve_method(method, self.setup.as_deref(), self.ladder.as_ref())
    }

    /// Full training configuration for `schedule`.
    pub fn train_config(&self, schedule: Schedule) -> Result<TrainConfig> {
        let mut c = TrainConfig::toy(schedule, self.seed());
        if let Some(spec) = self.model {
            c.spec = spec;
        }
        if let Some(task) = self.task {
            c.task = task;
        }
        let t = &self.training;
        c.epochs = t.epochs.unwrap_or(c.epochs);
        c.steps_per_epoch = t.steps_per_epoch.unwrap_or(c.steps_per_epoch);
        c.base_lr = t.base_lr.unwrap_or(c.base_lr);
        c.warmup = t.warmup.unwrap_or(c.warmup);
        c.label_smoothing = t.label_smoothing.unwrap_or(c.label_smoothing);
        c.dropout = t.dropout.unwrap_or(c.dropout);
        c.eval_samples = t.eval_samples.unwrap_or(c.eval_samples);
        c.stop_on_failure = t.stop_on_failure.unwrap_or(c.stop_on_failure);
        c.table = self.unit_costs()?;
        c.profile = self.traffic_profile()?;
        c.validate()?;
        Ok(c)
    }

    pub fn estimate_model(&self) -> ModelSpec {
        self.estimate
            .model
            .unwrap_or_else(ModelSpec::transformer_6layer)
    }
}

use std::fs;
use std::path::{Path, PathBuf};

use dsq_core::costmodel::{
    baseline_config, estimate_static, estimate_trace, fit_phase_durations, normalize, phase_steps,
    roofline, CostLedger, LedgerSnapshot, PhaseFit, RooflinePoint, TrafficProfile, UnitCostTable,
};
use dsq_core::formats::FormatKind;
use dsq_core::qtraining::{
    train::{DivergenceEvent, EpochRecord, Phase, TraceEntry},
    train_run, ModelSpec, PrecisionConfig, RunReport, Schedule, TaskSpec, Verdict,
};
use dsq_core::scheduler::{ScheduleLadder, MIN_Q3_BITS};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::{parse_setup, Method, ResolvedMethod, RowSpec, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{csv_bytes, json_line, write_file, Row};
use crate::svg::{self, Axis, Series};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COST_FILE: &str = "cost.csv";
pub const ESTIMATE_FILE: &str = "estimate.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const ROOFLINE_SVG: &str = "roofline.svg";
pub const ROOFLINE_CSV: &str = "roofline.csv";
pub const LOSS_SVG: &str = "loss.svg";

/// One line of `metrics.jsonl`.
#[derive(Debug, Serialize)]
struct MetricLine<'a> {
    method: &'a str,
    precision_setup: &'a str,
    seed: u64,
    #[serde(flatten)]
    record: &'a EpochRecord,
}

/// Fields of `metrics.jsonl` that `report` reads back.
#[derive(Debug, Deserialize)]
struct MetricPoint {
    method: String,
    precision_setup: String,
    seed: u64,
    step: u64,
    valid_loss: Option<f64>,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub method: Method,
    pub precision_setup: String,
    pub seed: u64,
    pub verdict: Verdict,
    pub final_token_accuracy: f64,
    pub final_valid_loss: f64,
    pub steps_completed: u64,
    /// Live cost against the 32-bit fixed baseline over the same steps;
    /// absent when no step completed.
    pub arith_ratio: Option<f64>,
    pub dram_ratio: Option<f64>,
    pub trace: Vec<TraceEntry>,
    pub phases: Vec<Phase>,
    pub events: Vec<DivergenceEvent>,
    pub ledger: LedgerSnapshot,
    pub model: ModelSpec,
    pub task: TaskSpec,
    pub epochs: usize,
    pub steps_per_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: RunReport,
    pub summary: Summary,
    pub rows: Vec<Row>,
    pub out_dir: PathBuf,
}

fn live_ratios(
    report: &RunReport,
    spec: &ModelSpec,
    table: &UnitCostTable,
    profile: &TrafficProfile,
) -> Result<Option<(f64, f64)>> {
    if report.steps_completed == 0 {
        return Ok(None);
    }
    let base = estimate_static(
        spec,
        &baseline_config(),
        report.steps_completed,
        table,
        profile,
    )?;
    Ok(Some(normalize(&report.cost, &base)?))
}

/// Trains once and writes `metrics.jsonl`, `summary.json`, and `cost.csv`.
/// A diverged run is reported with a `Failed` verdict, not as an error.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let resolved = cfg.method()?;
    let tc = cfg.train_config(resolved.schedule.clone())?;
    let label = resolved.setup_label();
    let method = resolved.method.name();
    info!("training {method} {label}, seed {}", tc.seed);
    let report = train_run(&tc)?;

    let mut metrics = String::new();
    for record in &report.epochs {
        metrics += &json_line(&MetricLine {
            method,
            precision_setup: &label,
            seed: tc.seed,
            record,
        })?;
    }
    let ratios = live_ratios(&report, &tc.spec, &tc.table, &tc.profile)?;
    let last = report.final_record();
    let summary = Summary {
        method: resolved.method,
        precision_setup: label.clone(),
        seed: tc.seed,
        verdict: report.verdict,
        final_token_accuracy: last.token_acc,
        final_valid_loss: last.valid_loss,
        steps_completed: report.steps_completed,
        arith_ratio: ratios.map(|r| r.0),
        dram_ratio: ratios.map(|r| r.1),
        trace: report.trace.clone(),
        phases: report.phases.clone(),
        events: report.events.clone(),
        ledger: report.ledger.clone(),
        model: tc.spec,
        task: tc.task,
        epochs: tc.epochs,
        steps_per_epoch: tc.steps_per_epoch,
    };
    let mut rows = vec![
        Row::new(method, &label, "verdict", format!("{:?}", report.verdict)),
        Row::new(method, &label, "token_accuracy", last.token_acc),
        Row::new(method, &label, "valid_loss", last.valid_loss),
        Row::new(method, &label, "steps", report.steps_completed),
    ];
    if let Some((a, d)) = ratios {
        rows.push(Row::new(method, &label, "arith_ratio", a));
        rows.push(Row::new(method, &label, "dram_ratio", d));
    }
    rows.push(Row::new(
        method,
        &label,
        "mac_units",
        report.cost.mac_units(),
    ));
    rows.push(Row::new(
        method,
        &label,
        "dram_bits",
        report.cost.total_dram_bits(),
    ));

    write_file(out, METRICS_FILE, metrics.as_bytes())?;
    write_file(
        out,
        SUMMARY_FILE,
        (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
    )?;
    write_file(out, COST_FILE, &csv_bytes(&rows)?)?;
    Ok(TrainOutcome {
        report,
        summary,
        rows,
        out_dir: out.to_path_buf(),
    })
}

/// The comparison table: every static method at its usual setups, then dsq.
pub fn default_rows() -> Vec<RowSpec> {
    let row = |method, setup: &str| RowSpec {
        method,
        setup: Some(setup.to_string()),
    };
    vec![
        row(Method::FloatingPoint, "32,32,32,32"),
        row(Method::Fixed, "32,32,32,32"),
        row(Method::Fixed, "16,16,16,16"),
        row(Method::Bfp, "32,32,32,32"),
        row(Method::Bfp, "16,16,16,16"),
        row(Method::StashingFixed, "16,4,4,16"),
        row(Method::StashingBfp, "16,4,4,16"),
        RowSpec {
            method: Method::Dsq,
            setup: None,
        },
    ]
}

/// Cost of one table row on the estimator model.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub method: Method,
    pub label: String,
    pub ledger: CostLedger,
    pub ratios: (f64, f64),
    /// Phase fit of a dsq row.
    pub fit: Option<PhaseFit>,
}

struct Estimator<'a> {
    spec: ModelSpec,
    steps: u64,
    table: UnitCostTable,
    profile: TrafficProfile,
    baseline: CostLedger,
    cfg: &'a RunConfig,
}

impl<'a> Estimator<'a> {
    fn new(cfg: &'a RunConfig) -> Result<Self> {
        let spec = cfg.estimate_model();
        spec.validate()?;
        let steps = cfg.estimate.steps;
        if steps == 0 {
            return Err(CliError::Config("estimate.steps must be positive".into()));
        }
        let (table, profile) = (cfg.unit_costs()?, cfg.traffic_profile()?);
        let baseline = estimate_static(&spec, &baseline_config(), steps, &table, &profile)?;
        Ok(Estimator {
            spec,
            steps,
            table,
            profile,
            baseline,
            cfg,
        })
    }

    fn static_ledger(&self, pc: &PrecisionConfig) -> Result<CostLedger> {
        Ok(estimate_static(
            &self.spec,
            pc,
            self.steps,
            &self.table,
            &self.profile,
        )?)
    }

    fn ladder_ledger(&self, ladder: &ScheduleLadder) -> Result<(CostLedger, PhaseFit)> {
        let [a, d] = self.cfg.estimate.dsq_target;
        let fit = fit_phase_durations(
            &self.table,
            &self.profile,
            &self.spec,
            ladder.configs(),
            (a, d),
        )?;
        let steps = phase_steps(&fit.fractions, self.steps)?;
        let phases: Vec<(PrecisionConfig, u64)> =
            ladder.configs().iter().copied().zip(steps).collect();
        Ok((
            estimate_trace(&self.spec, &phases, &self.table, &self.profile)?,
            fit,
        ))
    }

    fn estimate(&self, resolved: &ResolvedMethod) -> Result<Estimate> {
        let (ledger, fit) = match &resolved.schedule {
            Schedule::Static(pc) => (self.static_ledger(pc)?, None),
            Schedule::Ladder(l) => {
                let (ledger, fit) = self.ladder_ledger(l)?;
                (ledger, Some(fit))
            }
        };
        let ratios = normalize(&ledger, &self.baseline)?;
        Ok(Estimate {
            method: resolved.method,
            label: resolved.setup_label(),
            ledger,
            ratios,
            fit,
        })
    }
}

fn requested_rows(cfg: &RunConfig) -> Result<Vec<ResolvedMethod>> {
    let rows = match (&cfg.estimate.rows, cfg.method) {
        (Some(rows), _) => rows.clone(),
        (None, Some(_)) => return Ok(vec![cfg.method()?]),
        (None, None) => default_rows(),
    };
    rows.iter()
        .map(|r| {
            let ladder = cfg.ladder.as_ref().filter(|_| r.method == Method::Dsq);
            cfg.resolve_method(r.method, r.setup.as_deref(), ladder)
        })
        .collect()
}

/// Costs every requested row, all normalized to 32-bit fixed point, and
/// writes them to `estimate.csv` when `out` is given.
pub fn cmd_estimate(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<Row>> {
    let est = Estimator::new(cfg)?;
    let requested = requested_rows(cfg)?;
    let mut rows = Vec::new();
    for r in &requested {
        let e = est.estimate(r)?;
        let (m, s) = (e.method.name(), e.label.as_str());
        rows.push(Row::new(m, s, "arith_ratio", e.ratios.0));
        rows.push(Row::new(m, s, "dram_ratio", e.ratios.1));
        if let Some(fit) = &e.fit {
            for (i, f) in fit.fractions.iter().enumerate() {
                rows.push(Row::new(m, s, &format!("phase_fraction.{i}"), f));
            }
            rows.push(Row::new(m, s, "fit_residual", fit.residual));
            let fixed16 =
                est.static_ledger(&PrecisionConfig::from_bits(FormatKind::Fixed, [16; 4])?)?;
            let (ra, rd) = normalize(&fixed16, &e.ledger)?;
            rows.push(Row::new(m, s, "arith_reduction_vs_fixed16", ra));
            rows.push(Row::new(m, s, "dram_reduction_vs_fixed16", rd));
        }
    }
    if let Some(dir) = out {
        write_file(dir, ESTIMATE_FILE, &csv_bytes(&rows)?)?;
    }
    Ok(rows)
}

/// Trains each setup of the grid in input order and tabulates accuracy,
/// verdict, and estimated cost. A run that errors becomes a `Failed` row.
///
/// A fixed-point setup whose `q3` is narrower than the schedule minimum is
/// expected to fail; if it converges anyway the row gets `flag = review`.
pub fn cmd_sweep(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<Row>> {
    let method = cfg
        .sweep
        .method
        .or(cfg.method)
        .ok_or_else(|| CliError::Config("sweep needs a method".into()))?;
    if method == Method::Dsq {
        return Err(CliError::Config(
            "sweep grids hold static setups; dsq is not one".into(),
        ));
    }
    let setups: Vec<PrecisionConfig> = cfg
        .sweep
        .setups
        .iter()
        .map(|s| parse_setup(method, s))
        .collect::<Result<_>>()?;
    let est = if setups.is_empty() {
        None
    } else {
        Some(Estimator::new(cfg)?)
    };
    let mut rows = Vec::new();
    let m = method.name();
    for pc in &setups {
        let label = pc.setup_label();
        let s = label.as_str();
        let run = cfg
            .train_config(Schedule::Static(*pc))
            .and_then(|tc| Ok(train_run(&tc)?));
        match run {
            Ok(report) => {
                let last = report.final_record();
                rows.push(Row::new(m, s, "token_accuracy", last.token_acc));
                rows.push(Row::new(m, s, "valid_loss", last.valid_loss));
                rows.push(Row::new(m, s, "verdict", format!("{:?}", report.verdict)));
                let narrow =
                    pc.family() == FormatKind::Fixed && pc.q3().element_bits() < MIN_Q3_BITS;
                if narrow && report.verdict == Verdict::Converged {
                    warn!("{m} {s} converged although its q3 is below {MIN_Q3_BITS} bits");
                    rows.push(Row::new(m, s, "flag", "review"));
                }
            }
            Err(e) => {
                warn!("{m} {s} failed: {e}");
                rows.push(Row::new(m, s, "verdict", "Failed"));
                rows.push(Row::new(m, s, "error", e));
            }
        }
        if let Some(est) = &est {
            let e = est.estimate(&ResolvedMethod {
                method,
                schedule: Schedule::Static(*pc),
            })?;
            rows.push(Row::new(m, s, "arith_ratio", e.ratios.0));
            rows.push(Row::new(m, s, "dram_ratio", e.ratios.1));
        }
    }
    if let Some(dir) = out {
        write_file(dir, SWEEP_FILE, &csv_bytes(&rows)?)?;
    }
    Ok(rows)
}

/// Files written by [`cmd_report`].
#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub points: Vec<(String, RooflinePoint)>,
    pub runs: Vec<PathBuf>,
    pub files: Vec<PathBuf>,
}

fn run_dirs(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    if !cfg.report.runs.is_empty() {
        return Ok(cfg.report.runs.clone());
    }
    let mut dirs = Vec::new();
    if out.join(METRICS_FILE).is_file() {
        dirs.push(out.to_path_buf());
    }
    if let Ok(entries) = fs::read_dir(out) {
        let mut subs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(METRICS_FILE).is_file())
            .collect();
        subs.sort();
        dirs.extend(subs);
    }
    Ok(dirs)
}

fn loss_series(dir: &Path) -> Result<Series> {
    let path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path).map_err(|source| CliError::Read {
        path: path.clone(),
        source,
    })?;
    let mut label = String::new();
    let mut points = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let p: MetricPoint = serde_json::from_str(line).map_err(|e| CliError::Input {
            what: "metrics line",
            path: path.clone(),
            message: e.to_string(),
        })?;
        label = format!("{} {} s{}", p.method, p.precision_setup, p.seed);
        if let Some(v) = p.valid_loss {
            points.push((p.step as f64, v));
        }
    }
    Ok(Series { label, points })
}

/// Renders a roofline of the comparison table on the estimator model and
/// the validation-loss curves of every run found.
pub fn cmd_report(cfg: &RunConfig, out: &Path) -> Result<ReportOutcome> {
    let est = Estimator::new(cfg)?;
    let (peak, bw) = (
        cfg.report.peak_ops_per_sec,
        cfg.report.bandwidth_bytes_per_sec,
    );
    let mut points = Vec::new();
    let mut rows = Vec::new();
    for r in requested_rows(cfg)? {
        let e = est.estimate(&r)?;
        let p = roofline(&e.ledger, peak, bw)?;
        let name = format!("{} {}", e.method.name(), e.label);
        rows.push(Row::new(
            e.method.name(),
            &e.label,
            "operational_intensity",
            p.operational_intensity,
        ));
        rows.push(Row::new(
            e.method.name(),
            &e.label,
            "attainable_performance",
            p.attainable_performance,
        ));
        points.push((name, p));
    }
    let knee = peak / bw;
    let finite = || {
        points
            .iter()
            .map(|(_, p)| p.operational_intensity)
            .filter(|i| i.is_finite())
    };
    let lo = finite().fold(knee, f64::min) / 10.0;
    let hi = finite().fold(knee, f64::max) * 10.0;
    let ceiling = Series {
        label: "roofline".into(),
        points: vec![(lo, bw * lo), (knee, peak), (hi, peak)],
    };
    let series: Vec<Series> = points
        .iter()
        .map(|(name, p)| Series {
            label: name.clone(),
            points: vec![(p.operational_intensity, p.attainable_performance)],
        })
        .collect();
    let roof_svg = svg::chart(
        "Roofline",
        Axis {
            label: "operational intensity (MAC/byte)",
            log: true,
        },
        Axis {
            label: "attainable MAC/s",
            log: true,
        },
        &series,
        &[ceiling],
        true,
    );

    let runs = run_dirs(cfg, out)?;
    let curves = runs
        .iter()
        .map(|d| loss_series(d))
        .collect::<Result<Vec<_>>>()?;
    let loss_svg = svg::chart(
        "Validation loss",
        Axis {
            label: "step",
            log: false,
        },
        Axis {
            label: "loss",
            log: false,
        },
        &curves,
        &[],
        false,
    );
    let files = vec![
        write_file(out, ROOFLINE_SVG, roof_svg.as_bytes())?,
        write_file(out, ROOFLINE_CSV, &csv_bytes(&rows)?)?,
        write_file(out, LOSS_SVG, loss_svg.as_bytes())?,
    ];
    Ok(ReportOutcome {
        points,
        runs,
        files,
    })
}

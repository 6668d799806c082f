use super::{
    fit_fractions, normalize, CostContext, CostLedger, PhaseFit, TrafficProfile, UnitCostTable,
};
use crate::error::{Error, Result};
use crate::formats::NumberFormat;
use crate::qtraining::{charge_training_step, ModelSpec, PrecisionConfig};

/// Cost of `steps` training steps of `spec` run at a fixed precision setup.
pub fn estimate_static(
    spec: &ModelSpec,
    cfg: &PrecisionConfig,
    steps: u64,
    table: &UnitCostTable,
    profile: &TrafficProfile,
) -> Result<CostLedger> {
    if steps == 0 {
        return Ok(CostLedger::new());
    }
    let mut step = CostLedger::new();
    charge_training_step(
        spec,
        &CostContext {
            cfg,
            table,
            profile,
        },
        &mut step,
    )?;
    Ok(step.repeated(steps))
}

/// Cost of a schedule given as consecutive `(setup, steps)` phases.
pub fn estimate_trace(
    spec: &ModelSpec,
    phases: &[(PrecisionConfig, u64)],
    table: &UnitCostTable,
    profile: &TrafficProfile,
) -> Result<CostLedger> {
    let mut total = CostLedger::new();
    for (cfg, steps) in phases {
        total.merge(&estimate_static(spec, cfg, *steps, table, profile)?);
    }
    Ok(total)
}

/// The uniform 32-bit fixed-point setup every ratio is measured against.
pub fn baseline_config() -> PrecisionConfig {
    PrecisionConfig::uniform(NumberFormat::fixed(32).expect("32 is a valid fixed width"))
}

/// `(arith, dram)` ratios of one step at `cfg` against the 32-bit fixed baseline.
pub fn static_ratios(
    spec: &ModelSpec,
    cfg: &PrecisionConfig,
    table: &UnitCostTable,
    profile: &TrafficProfile,
) -> Result<(f64, f64)> {
    let run = estimate_static(spec, cfg, 1, table, profile)?;
    let base = estimate_static(spec, &baseline_config(), 1, table, profile)?;
    normalize(&run, &base)
}

/// Splits `total` steps across phases in proportion to `fractions`,
/// handing leftover steps to the largest remainders (earlier phases on ties).
pub fn phase_steps(fractions: &[f64], total: u64) -> Result<Vec<u64>> {
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(Error::Config(format!(
            "phase fractions must be non-negative, got {fractions:?}"
        )));
    }
    let sum: f64 = fractions.iter().sum();
    if sum <= 0.0 {
        return Err(Error::Config("phase fractions sum to zero".into()));
    }
    let exact: Vec<f64> = fractions.iter().map(|f| f / sum * total as f64).collect();
    let mut steps: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let mut left = total - steps.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..exact.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        steps[i] += 1;
        left -= 1;
    }
    Ok(steps)
}

/// Fits how long a schedule must stay on each rung to reach `target` ratios.
pub fn fit_phase_durations(
    table: &UnitCostTable,
    profile: &TrafficProfile,
    spec: &ModelSpec,
    ladder: &[PrecisionConfig],
    target: (f64, f64),
) -> Result<PhaseFit> {
    let ratios: Vec<(f64, f64)> = ladder
        .iter()
        .map(|cfg| static_ratios(spec, cfg, table, profile))
        .collect::<Result<_>>()?;
    fit_fractions(&ratios, target)
}

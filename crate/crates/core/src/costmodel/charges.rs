//! Ledger entries for each quantized GEMM site. The live layers and the static
//! estimator both go through these, so the two agree by construction.

use super::{CostLedger, Direction, TensorClass, TrafficProfile, UnitCostTable};
use crate::error::Result;
use crate::qtraining::PrecisionConfig;

/// Everything needed to price one training step.
#[derive(Debug, Clone, Copy)]
pub struct CostContext<'a> {
    pub cfg: &'a PrecisionConfig,
    pub table: &'a UnitCostTable,
    pub profile: &'a TrafficProfile,
}

impl CostContext<'_> {
    fn dram(&self, ledger: &mut CostLedger, class: TensorClass, dir: Direction, n: usize) {
        let fmt = self.profile.width(class, self.cfg);
        ledger.record_dram(class, dir, n, fmt, self.profile, self.table);
    }
}

/// Forward of `y[m×n] = x[m×k] · w[k×n]`.
pub fn linear_forward(
    ledger: &mut CostLedger,
    ctx: &CostContext,
    m: usize,
    k: usize,
    n: usize,
) -> Result<()> {
    let cfg = ctx.cfg;
    ledger.record_gemm(m, n, k, cfg.q0(), cfg.q0(), ctx.table)?;
    ctx.dram(ledger, TensorClass::Activation, Direction::Read, m * k);
    ctx.dram(ledger, TensorClass::Weight, Direction::Read, k * n);
    ctx.dram(ledger, TensorClass::Activation, Direction::Write, m * n);
    ctx.dram(ledger, TensorClass::Stash, Direction::Write, m * k);
    Ok(())
}

/// Backward of a linear layer: the `dx` and `dw` GEMMs plus the flush of `dx`.
pub fn linear_backward(
    ledger: &mut CostLedger,
    ctx: &CostContext,
    m: usize,
    k: usize,
    n: usize,
) -> Result<()> {
    let cfg = ctx.cfg;
    ledger.record_gemm(m, k, n, cfg.q2(), cfg.q0(), ctx.table)?;
    ledger.record_gemm(k, n, m, cfg.q1(), cfg.q3(), ctx.table)?;
    ctx.dram(ledger, TensorClass::ActGrad, Direction::Read, m * n);
    ctx.dram(ledger, TensorClass::Weight, Direction::Read, k * n);
    ctx.dram(ledger, TensorClass::Stash, Direction::Read, m * k);
    ctx.dram(ledger, TensorClass::ActGrad, Direction::Write, m * k);
    ctx.dram(ledger, TensorClass::WeightGrad, Direction::Write, k * n);
    Ok(())
}

/// Forward of an activation-by-activation product `c[m×n] = a[m×k] · b[k×n]`.
pub fn bilinear_forward(
    ledger: &mut CostLedger,
    ctx: &CostContext,
    m: usize,
    k: usize,
    n: usize,
) -> Result<()> {
    let cfg = ctx.cfg;
    ledger.record_gemm(m, n, k, cfg.q0(), cfg.q0(), ctx.table)?;
    ctx.dram(ledger, TensorClass::Activation, Direction::Read, m * k);
    ctx.dram(ledger, TensorClass::Activation, Direction::Read, k * n);
    ctx.dram(ledger, TensorClass::Activation, Direction::Write, m * n);
    ctx.dram(ledger, TensorClass::Stash, Direction::Write, m * k);
    ctx.dram(ledger, TensorClass::Stash, Direction::Write, k * n);
    Ok(())
}

pub fn bilinear_backward(
    ledger: &mut CostLedger,
    ctx: &CostContext,
    m: usize,
    k: usize,
    n: usize,
) -> Result<()> {
    let cfg = ctx.cfg;
    ledger.record_gemm(m, k, n, cfg.q2(), cfg.q1(), ctx.table)?;
    ledger.record_gemm(k, n, m, cfg.q1(), cfg.q3(), ctx.table)?;
    ctx.dram(ledger, TensorClass::ActGrad, Direction::Read, m * n);
    ctx.dram(ledger, TensorClass::Stash, Direction::Read, m * k);
    ctx.dram(ledger, TensorClass::Stash, Direction::Read, k * n);
    ctx.dram(ledger, TensorClass::ActGrad, Direction::Write, m * k);
    ctx.dram(ledger, TensorClass::ActGrad, Direction::Write, k * n);
    Ok(())
}

/// One Adam update over `n` parameters: read the gradient, read and write
/// both moments, write the weights back.
pub fn optimizer_update(ledger: &mut CostLedger, ctx: &CostContext, n: usize) {
    ctx.dram(ledger, TensorClass::WeightGrad, Direction::Read, n);
    ctx.dram(ledger, TensorClass::Optimizer, Direction::Read, 2 * n);
    ctx.dram(ledger, TensorClass::Optimizer, Direction::Write, 2 * n);
    ctx.dram(ledger, TensorClass::Weight, Direction::Write, n);
}

//! Quantized GEMM layers. Every GEMM operand passes through one of the four
//! quantization points; everything else stays at reference precision.

use super::stash::{Operand, StashBuffer, StashKey};
use super::PrecisionConfig;
use crate::costmodel::{self, CostContext, CostLedger, TrafficProfile, UnitCostTable};
use crate::engine::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::formats::{quantize_along, BoxAxis};

/// Per-step state threaded through the layers: the active precision setup,
/// the cost ledger, and the stash.
///
/// An inference context neither stashes nor charges the ledger.
#[derive(Debug)]
pub struct StepContext<'a> {
    pub cfg: PrecisionConfig,
    pub table: &'a UnitCostTable,
    pub profile: &'a TrafficProfile,
    pub ledger: CostLedger,
    pub stash: StashBuffer,
    training: bool,
}

impl<'a> StepContext<'a> {
    pub fn new(
        cfg: PrecisionConfig,
        table: &'a UnitCostTable,
        profile: &'a TrafficProfile,
    ) -> Self {
        StepContext {
            cfg,
            table,
            profile,
            ledger: CostLedger::new(),
            stash: StashBuffer::new(),
            training: true,
        }
    }

    pub fn inference(
        cfg: PrecisionConfig,
        table: &'a UnitCostTable,
        profile: &'a TrafficProfile,
    ) -> Self {
        StepContext {
            training: false,
            ..Self::new(cfg, table, profile)
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    fn split(&mut self) -> (&mut CostLedger, CostContext<'_>) {
        (
            &mut self.ledger,
            CostContext {
                cfg: &self.cfg,
                table: self.table,
                profile: self.profile,
            },
        )
    }

    fn stash_put(&mut self, key: StashKey, t: &Tensor, axis: BoxAxis) -> Result<()> {
        if self.stash.contains(&key) {
            return Err(Error::Contract(format!(
                "{key:?} stashed twice in one step"
            )));
        }
        let q1 = self.cfg.q1();
        self.stash.put(key, quantize_along(t, q1, axis)?, q1)
    }
}

fn dims(a: &Tensor, b: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::Shape(format!(
            "{what}: {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok((a.shape()[0], a.shape()[1], b.shape()[1]))
}

/// `y = q0(x) · q0(w)`, stashing `q1(x)` for the weight gradient.
pub fn linear_forward(
    ctx: &mut StepContext,
    key: StashKey,
    x: &Tensor,
    w: &Tensor,
) -> Result<Tensor> {
    let (m, k, n) = dims(x, w, "linear forward")?;
    let q0 = ctx.cfg.q0();
    let y = gemm(
        &quantize_along(x, q0, BoxAxis::Rows)?,
        &quantize_along(w, q0, BoxAxis::Columns)?,
    )?;
    if ctx.training {
        // Boxes of the stash run along the token axis, the reduction axis of dw.
        ctx.stash_put(key, x, BoxAxis::Columns)?;
        let (ledger, cost) = ctx.split();
        costmodel::linear_forward(ledger, &cost, m, k, n)?;
    }
    Ok(y)
}

/// Returns `(dx, dw)`. `dx` comes back already flushed at `q3`.
///
/// `dx = q2(dy) · q0(w)ᵀ` and `dw = stash(x)ᵀ · q3(dy)`.
pub fn linear_backward(
    ctx: &mut StepContext,
    key: StashKey,
    dy: &Tensor,
    w: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let x_hat = ctx.stash.take(key)?.tensor;
    let (m, k, n) = dims(&x_hat, w, "linear backward")?;
    if dy.shape() != [m, n] {
        return Err(Error::Shape(format!(
            "linear upstream gradient {:?}, expected [{m}, {n}]",
            dy.shape()
        )));
    }
    let cfg = ctx.cfg;
    let dx = gemm(
        &quantize_along(dy, cfg.q2(), BoxAxis::Rows)?,
        &quantize_along(w, cfg.q0(), BoxAxis::Rows)?.transpose(),
    )?;
    let dw = gemm(
        &x_hat.transpose(),
        &quantize_along(dy, cfg.q3(), BoxAxis::Columns)?,
    )?;
    let dx = quantize_along(&dx, cfg.q3(), BoxAxis::Rows)?;
    let (ledger, cost) = ctx.split();
    costmodel::linear_backward(ledger, &cost, m, k, n)?;
    Ok((dx, dw))
}

/// `c = q0(a) · q0(b)` for two activations, stashing both at `q1`.
pub fn bilinear_forward(
    ctx: &mut StepContext,
    key: StashKey,
    a: &Tensor,
    b: &Tensor,
) -> Result<Tensor> {
    let (m, k, n) = dims(a, b, "bilinear forward")?;
    let q0 = ctx.cfg.q0();
    let c = gemm(
        &quantize_along(a, q0, BoxAxis::Rows)?,
        &quantize_along(b, q0, BoxAxis::Columns)?,
    )?;
    if ctx.training {
        ctx.stash_put(key.with_operand(Operand::Lhs), a, BoxAxis::Columns)?;
        ctx.stash_put(key.with_operand(Operand::Rhs), b, BoxAxis::Rows)?;
        let (ledger, cost) = ctx.split();
        costmodel::bilinear_forward(ledger, &cost, m, k, n)?;
    }
    Ok(c)
}

/// Returns `(da, db)`, both flushed at `q3`.
pub fn bilinear_backward(
    ctx: &mut StepContext,
    key: StashKey,
    dc: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let a_hat = ctx.stash.take(key.with_operand(Operand::Lhs))?.tensor;
    let b_hat = ctx.stash.take(key.with_operand(Operand::Rhs))?.tensor;
    let (m, k, n) = dims(&a_hat, &b_hat, "bilinear backward")?;
    if dc.shape() != [m, n] {
        return Err(Error::Shape(format!(
            "bilinear upstream gradient {:?}, expected [{m}, {n}]",
            dc.shape()
        )));
    }
    let cfg = ctx.cfg;
    let da = gemm(
        &quantize_along(dc, cfg.q2(), BoxAxis::Rows)?,
        &b_hat.transpose(),
    )?;
    let db = gemm(
        &a_hat.transpose(),
        &quantize_along(dc, cfg.q3(), BoxAxis::Columns)?,
    )?;
    let da = quantize_along(&da, cfg.q3(), BoxAxis::Rows)?;
    let db = quantize_along(&db, cfg.q3(), BoxAxis::Rows)?;
    let (ledger, cost) = ctx.split();
    costmodel::bilinear_backward(ledger, &cost, m, k, n)?;
    Ok((da, db))
}

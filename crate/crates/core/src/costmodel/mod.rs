//! Arithmetic and DRAM-traffic accounting, static cost estimation, and the
//! roofline view.

mod charges;
mod estimate;
mod fit;
mod ledger;
mod profile;
mod roofline;
mod table;

pub use charges::{
    bilinear_backward, bilinear_forward, linear_backward, linear_forward, optimizer_update,
    CostContext,
};
pub use estimate::{
    baseline_config, estimate_static, estimate_trace, fit_phase_durations, phase_steps,
    static_ratios,
};
pub use fit::{fit_fractions, mix, PhaseFit};
pub use ledger::{normalize, CostLedger, Direction, LedgerSnapshot, TensorClass};
pub use profile::{ClassRule, TrafficProfile, TrafficProfileSpec, WidthSource};
pub use roofline::{attainable, roofline, RooflinePoint};
pub use table::{UnitCostTable, UnitCostTableSpec};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time fractions of each schedule phase that best reproduce a target cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseFit {
    /// One non-negative fraction per rung, summing to one.
    pub fractions: Vec<f64>,
    /// Cost ratios the fractions produce.
    pub achieved: (f64, f64),
    /// Euclidean distance between `achieved` and the target.
    pub residual: f64,
}

const MAX_PHASES: usize = 16;

/// Least squares over the probability simplex.
///
/// `rung_ratios[i]` is the `(arith, dram)` ratio of running the whole job at
/// rung `i`. Every support set is tried: for each, the equality-constrained
/// problem is solved through its KKT system, and the best non-negative
/// solution wins. Infeasible targets are not an error; they show up as a
/// large residual.
pub fn fit_fractions(rung_ratios: &[(f64, f64)], target: (f64, f64)) -> Result<PhaseFit> {
    let n = rung_ratios.len();
    if n == 0 || n > MAX_PHASES {
        return Err(Error::Config(format!(
            "phase fit needs 1..={MAX_PHASES} rungs, got {n}"
        )));
    }
    let mut best: Option<PhaseFit> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let Some(sub) = solve_on_support(rung_ratios, &support, target) else {
            continue;
        };
        if sub.iter().any(|f| *f < -1e-12) {
            continue;
        }
        let mut fractions = vec![0.0; n];
        for (i, f) in support.iter().zip(&sub) {
            fractions[*i] = f.max(0.0);
        }
        let total: f64 = fractions.iter().sum();
        fractions.iter_mut().for_each(|f| *f /= total);
        let achieved = mix(rung_ratios, &fractions);
        let residual = (achieved.0 - target.0).hypot(achieved.1 - target.1);
        if best.as_ref().is_none_or(|b| residual < b.residual) {
            best = Some(PhaseFit {
                fractions,
                achieved,
                residual,
            });
        }
    }
    best.ok_or_else(|| Error::Config("phase fit found no feasible point".into()))
}

/// Ratios of a schedule that spends `fractions[i]` of its steps at rung `i`.
pub fn mix(rung_ratios: &[(f64, f64)], fractions: &[f64]) -> (f64, f64) {
    rung_ratios
        .iter()
        .zip(fractions)
        .fold((0.0, 0.0), |(a, d), (r, f)| (a + f * r.0, d + f * r.1))
}

fn solve_on_support(
    rung_ratios: &[(f64, f64)],
    support: &[usize],
    target: (f64, f64),
) -> Option<Vec<f64>> {
    let k = support.len();
    let r = DMatrix::from_fn(2, k, |row, col| {
        let p = rung_ratios[support[col]];
        if row == 0 {
            p.0
        } else {
            p.1
        }
    });
    let t = DVector::from_vec(vec![target.0, target.1]);
    let gram = r.transpose() * &r;
    let rhs_top = r.transpose() * t;
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    let mut rhs = DVector::zeros(k + 1);
    for i in 0..k {
        for j in 0..k {
            kkt[(i, j)] = gram[(i, j)];
        }
        kkt[(i, k)] = 1.0;
        kkt[(k, i)] = 1.0;
        rhs[i] = rhs_top[i];
    }
    rhs[k] = 1.0;
    let sol = kkt.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let f: Vec<f64> = sol.iter().take(k).copied().collect();
    // A rank-deficient system has many solutions; the pseudo-inverse one must
    // still satisfy the simplex equality to be usable.
    let sum: f64 = f.iter().sum();
    ((sum - 1.0).abs() < 1e-9 && f.iter().all(|v| v.is_finite())).then_some(f)
}

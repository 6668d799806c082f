//! Brute-force oracles and randomized checks shared by the integration tests.
#![allow(dead_code)]

use dsq_core::costmodel::{TrafficProfile, UnitCostTable};
use dsq_core::engine::{
    add, add_backward, cross_entropy, cross_entropy_backward, finite_difference_grad, gelu,
    gelu_backward, gemm, gemm_backward, layer_norm, layer_norm_backward, mul, mul_backward, relu,
    relu_backward, scale, softmax_rows, softmax_rows_backward, Tensor,
};
use dsq_core::formats::{BoxAxis, FormatKind, NumberFormat};
use dsq_core::qtraining::model::{forward, loss_and_grads};
use dsq_core::qtraining::stash::{Site, StashKey};
use dsq_core::qtraining::{
    bilinear_backward, bilinear_forward, linear_backward, linear_forward, ModelSpec, Params,
    PrecisionConfig, StepContext,
};
use dsq_core::scheduler::{ScheduleLadder, ScheduleState, MIN_Q3_BITS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- formats

/// Grid point nearest to `v` among `k·step` for `|k| ≤ max_code`, ties to even `k`.
/// Narrow grids are searched exhaustively; wide ones only around `v / step`.
fn nearest_on_grid(v: f64, step: f64, max_code: i64) -> f64 {
    let (lo, hi) = if max_code <= 1024 {
        (-max_code, max_code)
    } else {
        let c = (v / step).trunc() as i64;
        ((c - 2).max(-max_code), (c + 2).min(max_code))
    };
    let (mut best_k, mut best_d) = (0i64, f64::INFINITY);
    for k in lo..=hi {
        let d = (v - k as f64 * step).abs();
        if d < best_d || (d == best_d && k % 2 == 0) {
            (best_k, best_d) = (k, d);
        }
    }
    best_k as f64 * step
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Smallest power of two strictly above `max`, found by doubling and halving.
fn scale_above(max: f64) -> f64 {
    let mut s = 1.0f64;
    while s <= max {
        s *= 2.0;
    }
    while s / 2.0 > max {
        s /= 2.0;
    }
    s
}

/// `floor(log2 max)` by repeated doubling and halving.
fn exponent_of(max: f64) -> i32 {
    let (mut p, mut e) = (1.0f64, 0i32);
    while p > max {
        p /= 2.0;
        e -= 1;
    }
    while p * 2.0 <= max {
        p *= 2.0;
        e += 1;
    }
    e
}

fn two_to(k: i32) -> f64 {
    let mut v = 1.0f64;
    for _ in 0..k.unsigned_abs() {
        v = if k > 0 { v * 2.0 } else { v / 2.0 };
    }
    v
}

/// Fixed-point snapping by exhaustive search over every representable value.
pub fn fixed_oracle(x: &[f64], bits: u32) -> Vec<f64> {
    let max = max_abs(x);
    if max == 0.0 {
        return vec![0.0; x.len()];
    }
    let half = 1i64 << (bits - 1);
    let step = scale_above(max) / half as f64;
    x.iter()
        .map(|&v| nearest_on_grid(v, step, half - 1))
        .collect()
}

/// Grid step of a BFP box with shared exponent `e`.
pub fn bfp_step(bits: u32, e: i32) -> f64 {
    two_to(e - (bits as i32 - 2))
}

/// Shared exponent an oracle assigns to a box.
pub fn bfp_oracle_exponent(x: &[f64], fmt: NumberFormat) -> i32 {
    let (lo, hi) = fmt.exponent_range();
    let max = max_abs(x);
    if max == 0.0 {
        lo
    } else {
        exponent_of(max).clamp(lo, hi)
    }
}

/// BFP snapping of one box by exhaustive search, optionally with a pinned exponent.
pub fn bfp_oracle(x: &[f64], fmt: NumberFormat, pinned: Option<i32>) -> Vec<f64> {
    let e = pinned.unwrap_or_else(|| bfp_oracle_exponent(x, fmt));
    let bits = fmt.element_bits();
    let step = bfp_step(bits, e);
    let max_code = (1i64 << (bits - 1)) - 1;
    x.iter()
        .map(|&v| nearest_on_grid(v, step, max_code))
        .collect()
}

/// A random block drawn from one of several regimes: uniform, dyadic values
/// that land on rounding ties, wide dynamic range with zeros, or tiny magnitudes.
pub fn random_block(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let style = rng.random_range(0..4);
    let scale = two_to(rng.random_range(-24..24));
    (0..len)
        .map(|_| match style {
            0 => rng.random_range(-1.0..1.0) * scale,
            1 => f64::from(rng.random_range(-96i32..=96)) * scale / 32.0,
            2 => {
                if rng.random_bool(0.25) {
                    0.0
                } else {
                    rng.random_range(-1.0..1.0) * scale * two_to(rng.random_range(-12..1))
                }
            }
            _ => rng.random_range(-1.0..1.0) * two_to(rng.random_range(-140..-120)),
        })
        .collect()
}

// ---------------------------------------------------------------- engine

/// Naive triple-loop product, accumulated in ascending `k`.
pub fn naive_gemm(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a.get(i, p) * b.get(p, j);
            }
            c[i * n + j] = acc;
        }
    }
    Tensor::matrix(m, n, c).unwrap()
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

/// `Σ r ⊙ t`: turns a tensor-valued function into a scalar one.
pub fn project(t: &Tensor, r: &Tensor) -> f64 {
    t.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

pub const FD_EPS: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-6;

/// `max |a − b| / max |b|`, with `b` the finite-difference reference.
pub fn grad_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let scale = numeric.max_abs().max(1e-12);
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Central differences at `h` and `h/2`, Richardson-extrapolated to cancel
/// the leading truncation term.
fn fd(f: impl Fn(&Tensor) -> f64, x: &Tensor) -> Tensor {
    let coarse = finite_difference_grad(&f, x, FD_EPS).unwrap();
    let fine = finite_difference_grad(&f, x, FD_EPS / 2.0).unwrap();
    let data = fine
        .data()
        .iter()
        .zip(coarse.data())
        .map(|(a, b)| (4.0 * a - b) / 3.0)
        .collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

fn dim(rng: &mut impl Rng) -> usize {
    rng.random_range(1..=8)
}

fn reference_ctx<'a>(table: &'a UnitCostTable, profile: &'a TrafficProfile) -> StepContext<'a> {
    StepContext::new(PrecisionConfig::reference(), table, profile)
}

/// Worst finite-difference error of every backward kernel and both
/// reference-precision layers on one random instance.
pub fn kernel_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut g = rng(seed);
    let (m, k, n) = (dim(&mut g), dim(&mut g), dim(&mut g));
    let mut out = Vec::new();

    let (a, b, r) = (
        random_matrix(&mut g, m, k),
        random_matrix(&mut g, k, n),
        random_matrix(&mut g, m, n),
    );
    let (da, db) = gemm_backward(&a, &b, &r).unwrap();
    out.push((
        "gemm.a",
        grad_error(&da, &fd(|t| project(&gemm(t, &b).unwrap(), &r), &a)),
    ));
    out.push((
        "gemm.b",
        grad_error(&db, &fd(|t| project(&gemm(&a, t).unwrap(), &r), &b)),
    ));

    let (x, y, r) = (
        random_matrix(&mut g, m, n),
        random_matrix(&mut g, m, n),
        random_matrix(&mut g, m, n),
    );
    let row = random_matrix(&mut g, 1, n);
    let (dx, drow) = add_backward(&r, row.shape()).unwrap();
    out.push((
        "add.lhs",
        grad_error(&dx, &fd(|t| project(&add(t, &row).unwrap(), &r), &x)),
    ));
    out.push((
        "add.row",
        grad_error(&drow, &fd(|t| project(&add(&x, t).unwrap(), &r), &row)),
    ));
    let (dx, dy) = mul_backward(&x, &y, &r).unwrap();
    out.push((
        "mul.lhs",
        grad_error(&dx, &fd(|t| project(&mul(t, &y).unwrap(), &r), &x)),
    ));
    out.push((
        "mul.rhs",
        grad_error(&dy, &fd(|t| project(&mul(&x, t).unwrap(), &r), &y)),
    ));
    let s = g.random_range(-2.0..2.0);
    out.push((
        "scale",
        grad_error(
            &scale(&r, s).unwrap(),
            &fd(|t| project(&scale(t, s).unwrap(), &r), &x),
        ),
    ));

    // Keep ReLU inputs away from the kink so central differences are valid.
    let xr = Tensor::matrix(
        m,
        n,
        x.data()
            .iter()
            .map(|v| if v.abs() < 0.01 { v + 0.05 } else { *v })
            .collect(),
    )
    .unwrap();
    out.push((
        "relu",
        grad_error(
            &relu_backward(&xr, &r).unwrap(),
            &fd(|t| project(&relu(t), &r), &xr),
        ),
    ));
    out.push((
        "gelu",
        grad_error(
            &gelu_backward(&x, &r).unwrap(),
            &fd(|t| project(&gelu(t), &r), &x),
        ),
    ));
    let sm = softmax_rows(&x);
    out.push((
        "softmax",
        grad_error(
            &softmax_rows_backward(&sm, &r).unwrap(),
            &fd(|t| project(&softmax_rows(t), &r), &x),
        ),
    ));

    let (gamma, beta) = (random_matrix(&mut g, 1, n), random_matrix(&mut g, 1, n));
    let eps = 1e-5;
    let (_, cache) = layer_norm(&x, &gamma, &beta, eps).unwrap();
    let (dx, dg, db) = layer_norm_backward(&cache, &gamma, &r).unwrap();
    let ln =
        |x: &Tensor, gm: &Tensor, bt: &Tensor| project(&layer_norm(x, gm, bt, eps).unwrap().0, &r);
    if n > 1 {
        out.push((
            "layer_norm.x",
            grad_error(&dx, &fd(|t| ln(t, &gamma, &beta), &x)),
        ));
    }
    out.push((
        "layer_norm.gamma",
        grad_error(&dg, &fd(|t| ln(&x, t, &beta), &gamma)),
    ));
    out.push((
        "layer_norm.beta",
        grad_error(&db, &fd(|t| ln(&x, &gamma, t), &beta)),
    ));

    let targets: Vec<usize> = (0..m).map(|_| g.random_range(0..n)).collect();
    let smoothing = g.random_range(0.0..0.3);
    let dl = cross_entropy_backward(&x, &targets, smoothing).unwrap();
    out.push((
        "cross_entropy",
        grad_error(
            &dl,
            &fd(|t| cross_entropy(t, &targets, smoothing).unwrap(), &x),
        ),
    ));

    let (table, profile) = (UnitCostTable::default(), TrafficProfile::default());
    let (xa, w, r) = (
        random_matrix(&mut g, m, k),
        random_matrix(&mut g, k, n),
        random_matrix(&mut g, m, n),
    );
    let key = StashKey::new(0, Site::Ffn1);
    let lin = |x: &Tensor, w: &Tensor| {
        let mut ctx = reference_ctx(&table, &profile);
        project(&linear_forward(&mut ctx, key, x, w).unwrap(), &r)
    };
    let mut ctx = reference_ctx(&table, &profile);
    linear_forward(&mut ctx, key, &xa, &w).unwrap();
    let (dx, dw) = linear_backward(&mut ctx, key, &r, &w).unwrap();
    out.push(("linear.x", grad_error(&dx, &fd(|t| lin(t, &w), &xa))));
    out.push(("linear.w", grad_error(&dw, &fd(|t| lin(&xa, t), &w))));

    let key = StashKey::instance(0, Site::Scores, 0);
    let bil = |a: &Tensor, b: &Tensor| {
        let mut ctx = reference_ctx(&table, &profile);
        project(&bilinear_forward(&mut ctx, key, a, b).unwrap(), &r)
    };
    let mut ctx = reference_ctx(&table, &profile);
    bilinear_forward(&mut ctx, key, &xa, &w).unwrap();
    let (da, db) = bilinear_backward(&mut ctx, key, &r).unwrap();
    out.push(("bilinear.a", grad_error(&da, &fd(|t| bil(t, &w), &xa))));
    out.push(("bilinear.b", grad_error(&db, &fd(|t| bil(&xa, t), &w))));
    out
}

pub fn tiny_spec() -> ModelSpec {
    ModelSpec {
        n_layers: 1,
        d_model: 8,
        n_heads: 2,
        d_ff: 12,
        vocab: 6,
        seq_len: 4,
        batch_size: 2,
    }
}

/// Worst finite-difference error over every parameter tensor of a tiny
/// reference-precision model.
pub fn model_gradient_error(seed: u64) -> f64 {
    let spec = tiny_spec();
    let mut g = rng(seed);
    let params = Params::init(&spec, seed).unwrap();
    let tokens: Vec<usize> = (0..spec.tokens())
        .map(|_| g.random_range(0..spec.vocab))
        .collect();
    let targets: Vec<usize> = (0..spec.tokens())
        .map(|_| g.random_range(0..spec.vocab))
        .collect();
    let smoothing = 0.1;
    let (table, profile) = (UnitCostTable::default(), TrafficProfile::default());
    let cfg = PrecisionConfig::reference();
    let loss = |p: &Params| {
        let mut ctx = StepContext::inference(cfg, &table, &profile);
        let (logits, _) = forward(p, &spec, &tokens, &mut ctx, None).unwrap();
        cross_entropy(&logits, &targets, smoothing).unwrap()
    };
    let mut ctx = StepContext::new(cfg, &table, &profile);
    let (_, grads) =
        loss_and_grads(&params, &spec, &tokens, &targets, smoothing, &mut ctx, None).unwrap();
    let mut worst = 0.0f64;
    for (i, analytic) in grads.tensors().into_iter().enumerate() {
        let numeric = fd(
            |t| {
                let mut p = params.clone();
                *p.tensors_mut()[i] = t.clone();
                loss(&p)
            },
            params.tensors()[i],
        );
        // Rows of unused embeddings have zero gradient on both sides.
        if numeric.max_abs() > 0.0 {
            worst = worst.max(grad_error(analytic, &numeric));
        }
    }
    worst
}

// ---------------------------------------------------------------- scheduler

/// A random monotone ladder of 1..=4 rungs with q3 ≥ 16.
pub fn random_ladder(g: &mut impl Rng) -> ScheduleLadder {
    let family = if g.random_bool(0.5) {
        FormatKind::Fixed
    } else {
        FormatKind::Bfp
    };
    let rungs = g.random_range(1..=4);
    let mut bits = [
        g.random_range(2..=8),
        g.random_range(2..=8),
        g.random_range(2..=8),
        g.random_range(MIN_Q3_BITS..=24),
    ];
    let mut configs = Vec::new();
    for _ in 0..rungs {
        configs.push(PrecisionConfig::from_bits(family, bits).unwrap());
        for b in &mut bits {
            *b = (*b + g.random_range(0..=4)).min(32);
        }
    }
    ScheduleLadder::new(
        configs,
        g.random_range(1..=4),
        [0.0, 1e-3][g.random_range(0..2)],
    )
    .unwrap()
}

/// Drives a scheduler through a random loss sequence and checks every step
/// against an independently tracked expectation. Returns a description of the
/// first discrepancy.
pub fn check_schedule_sequence(seed: u64) -> Result<(), String> {
    let mut g = rng(seed);
    let ladder = random_ladder(&mut g);
    let mut state = ScheduleState::new();
    let (mut best, mut stale, mut rung) = (f64::INFINITY, 0u32, 0usize);
    let mut prev_bits = ladder.configs()[0].bits();
    let len = g.random_range(1..=60);
    let mut loss: f64 = g.random_range(1.0..5.0);
    for step in 1..=len {
        loss = match g.random_range(0..6) {
            0 => f64::NAN,
            1 | 2 => loss,
            3 => loss * g.random_range(1.0..1.2),
            _ => loss * g.random_range(0.8..1.0),
        };
        let improved = loss.is_finite() && loss < best - ladder.min_delta();
        let mut expect_advance = false;
        if improved {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale == ladder.patience() && rung + 1 < ladder.configs().len() {
                expect_advance = true;
                rung += 1;
                stale = 0;
            }
        }
        let cfg = state.observe_validation(&ladder, step, loss);
        if state.rung != rung {
            return Err(format!(
                "seed {seed} step {step}: rung {} expected {rung}",
                state.rung
            ));
        }
        if expect_advance && state.trace.last() != Some(&(step, rung)) {
            return Err(format!(
                "seed {seed} step {step}: advance missing from trace"
            ));
        }
        if cfg.q3().element_bits() < MIN_Q3_BITS {
            return Err(format!("seed {seed} step {step}: q3 below {MIN_Q3_BITS}"));
        }
        let bits = cfg.bits();
        if bits
            .iter()
            .zip(prev_bits)
            .any(|(now, before)| *now < before)
        {
            return Err(format!(
                "seed {seed} step {step}: widths fell from {prev_bits:?} to {bits:?}"
            ));
        }
        prev_bits = bits;
        if !improved && !expect_advance && state.stale_evals != stale {
            return Err(format!(
                "seed {seed} step {step}: stale count {} expected {stale}",
                state.stale_evals
            ));
        }
    }
    if state
        .trace
        .windows(2)
        .any(|w| w[1].1 != w[0].1 + 1 || w[1].0 <= w[0].0)
    {
        return Err(format!(
            "seed {seed}: trace {:?} is not one rung per advance",
            state.trace
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------- misc

/// A BFP format whose box holds exactly `len` elements.
pub fn bfp(bits: u32, len: usize) -> NumberFormat {
    NumberFormat::bfp_with(bits, 8, len).unwrap()
}

pub fn fixed(bits: u32) -> NumberFormat {
    NumberFormat::fixed(bits).unwrap()
}

/// Quantizes a matrix box by box with the exhaustive oracles. Fixed point
/// uses one scale for the whole tensor; BFP boxes run along `axis`.
pub fn quantize_oracle(t: &Tensor, fmt: NumberFormat, axis: BoxAxis) -> Tensor {
    let (rows, cols) = (t.rows(), t.cols());
    match fmt.kind() {
        FormatKind::Reference => t.clone(),
        FormatKind::Fixed => {
            Tensor::matrix(rows, cols, fixed_oracle(t.data(), fmt.element_bits())).unwrap()
        }
        FormatKind::Bfp => {
            let lanes: Vec<Vec<f64>> = match axis {
                BoxAxis::Rows => (0..rows).map(|r| t.row(r).to_vec()).collect(),
                BoxAxis::Columns => (0..cols)
                    .map(|c| (0..rows).map(|r| t.get(r, c)).collect())
                    .collect(),
            };
            let mut out = vec![0.0; rows * cols];
            for (i, lane) in lanes.iter().enumerate() {
                let snapped: Vec<f64> = lane
                    .chunks(fmt.box_size())
                    .flat_map(|b| bfp_oracle(b, fmt, None))
                    .collect();
                for (j, v) in snapped.into_iter().enumerate() {
                    let (r, c) = match axis {
                        BoxAxis::Rows => (i, j),
                        BoxAxis::Columns => (j, i),
                    };
                    out[r * cols + c] = v;
                }
            }
            Tensor::matrix(rows, cols, out).unwrap()
        }
    }
}

type Snap = Box<dyn Fn(&[f64]) -> Vec<f64>>;

/// Idempotence, the error bound off the saturation limit, and (for widths up
/// to 8 bits) agreement with the exhaustive oracle, for one block.
pub fn check_quantizer_block(x: &[f64], bits: u32, use_bfp: bool) -> Result<(), String> {
    use dsq_core::formats::{max_abs_error_bound, snap_bfp, snap_fixed};
    let (fmt, snap): (NumberFormat, Snap) = if use_bfp {
        let fmt = bfp(bits, x.len());
        (fmt, Box::new(move |v| snap_bfp(v, fmt).unwrap().values))
    } else {
        (
            fixed(bits),
            Box::new(move |v| snap_fixed(v, bits).unwrap().values),
        )
    };
    let q = snap(x);
    if snap(&q) != q {
        return Err(format!("{fmt}: snapping {x:?} twice moved it"));
    }
    let exponent = if use_bfp {
        snap_bfp(x, fmt).unwrap().exponent
    } else {
        snap_fixed(x, bits).unwrap().exponent - 1
    };
    let limit = bfp_step(bits, exponent) * ((1u64 << (bits - 1)) - 1) as f64;
    let bound = max_abs_error_bound(fmt, x);
    for (v, s) in x.iter().zip(&q) {
        if v.abs() <= limit && (v - s).abs() > bound {
            return Err(format!("{fmt}: {v} -> {s} exceeds the bound {bound}"));
        }
    }
    if bits <= 8 {
        let want = if use_bfp {
            bfp_oracle(x, fmt, None)
        } else {
            fixed_oracle(x, bits)
        };
        if q != want {
            return Err(format!("{fmt}: {x:?} gave {q:?}, oracle {want:?}"));
        }
    }
    Ok(())
}

pub fn estimator_specs() -> [ModelSpec; 2] {
    [
        ModelSpec {
            n_layers: 1,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            vocab: 6,
            seq_len: 4,
            batch_size: 2,
        },
        ModelSpec {
            n_layers: 2,
            d_model: 12,
            n_heads: 3,
            d_ff: 20,
            vocab: 9,
            seq_len: 5,
            batch_size: 3,
        },
    ]
}

pub fn estimator_configs() -> Vec<PrecisionConfig> {
    vec![
        PrecisionConfig::reference(),
        PrecisionConfig::from_bits(FormatKind::Fixed, [32, 32, 32, 32]).unwrap(),
        PrecisionConfig::from_bits(FormatKind::Fixed, [16, 16, 16, 16]).unwrap(),
        PrecisionConfig::from_bits(FormatKind::Bfp, [16, 16, 16, 16]).unwrap(),
        PrecisionConfig::from_bits(FormatKind::Bfp, [16, 4, 4, 16]).unwrap(),
        PrecisionConfig::from_bits(FormatKind::Fixed, [16, 4, 4, 16]).unwrap(),
        PrecisionConfig::from_bits(FormatKind::Bfp, [2, 2, 2, 16]).unwrap(),
    ]
}

/// Trains a few steps of `cfg` and compares the live ledger with the static
/// estimate for the same number of steps, entry by entry.
pub fn estimator_live_mismatch(
    spec: ModelSpec,
    cfg: PrecisionConfig,
    profile: TrafficProfile,
) -> Result<(), String> {
    use dsq_core::costmodel::{estimate_static, Direction, TensorClass};
    use dsq_core::qtraining::{train_run, Schedule, TaskSpec, TaskVariant, TrainConfig};
    let mut tc = TrainConfig::toy(Schedule::Static(cfg), 3);
    tc.spec = spec;
    tc.task = TaskSpec {
        variant: TaskVariant::Reverse,
        n_samples: 64,
        valid_fraction: 0.25,
    };
    tc.epochs = 2;
    tc.steps_per_epoch = 2;
    tc.eval_samples = 4;
    tc.stop_on_failure = false;
    tc.profile = profile;
    let report = train_run(&tc).map_err(|e| e.to_string())?;
    if report.steps_completed == 0 {
        return Err(format!("{cfg}: no step completed"));
    }
    let est = estimate_static(&spec, &cfg, report.steps_completed, &tc.table, &profile)
        .map_err(|e| e.to_string())?;
    let live = &report.cost;
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs());
    let mut pairs = vec![
        ("macs".to_string(), live.macs(), est.macs()),
        ("mac_units".to_string(), live.mac_units(), est.mac_units()),
        (
            "gemms".to_string(),
            live.gemm_count() as f64,
            est.gemm_count() as f64,
        ),
    ];
    for class in [
        TensorClass::Activation,
        TensorClass::Weight,
        TensorClass::Stash,
        TensorClass::ActGrad,
        TensorClass::WeightGrad,
        TensorClass::Optimizer,
    ] {
        for dir in [Direction::Read, Direction::Write] {
            pairs.push((
                format!("{class:?}.{dir} bits"),
                live.dram_bits(class, dir),
                est.dram_bits(class, dir),
            ));
            pairs.push((
                format!("{class:?}.{dir} transfers"),
                live.transfer_count(class, dir) as f64,
                est.transfer_count(class, dir) as f64,
            ));
        }
    }
    for (what, a, b) in pairs {
        if !close(a, b) {
            return Err(format!(
                "{cfg} on {spec:?}: {what} live {a} vs estimate {b}"
            ));
        }
    }
    Ok(())
}

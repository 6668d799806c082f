use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::data::{make_task, Sample, TaskSpec};
use super::layers::StepContext;
use super::model::{forward, loss_and_grads, Dropout, ModelSpec, Params};
use super::optim::{adam_step, lr_schedule, AdamConfig, AdamState};
use super::PrecisionConfig;
use crate::costmodel::{
    self, CostContext, CostLedger, LedgerSnapshot, TrafficProfile, UnitCostTable,
};
use crate::engine::{argmax_rows, cross_entropy};
use crate::error::{Error, Result};
use crate::scheduler::{ScheduleLadder, ScheduleState};

/// Static setup, or an adaptive ladder.
#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    Static(PrecisionConfig),
    Ladder(ScheduleLadder),
}

impl Schedule {
    fn initial(&self) -> PrecisionConfig {
        match self {
            Schedule::Static(c) => *c,
            Schedule::Ladder(l) => l.configs()[0],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub spec: ModelSpec,
    pub task: TaskSpec,
    pub schedule: Schedule,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub seed: u64,
    pub base_lr: f64,
    pub warmup: u64,
    pub label_smoothing: f64,
    /// Residual-branch dropout rate; 0 disables it.
    pub dropout: f64,
    /// Validation samples scored per evaluation (0 = the whole split).
    pub eval_samples: usize,
    pub adam: AdamConfig,
    /// Stop as soon as the run is declared failed.
    pub stop_on_failure: bool,
    pub table: UnitCostTable,
    pub profile: TrafficProfile,
}

impl TrainConfig {
    /// Toy copy-task defaults for the given schedule.
    pub fn toy(schedule: Schedule, seed: u64) -> Self {
        TrainConfig {
            spec: ModelSpec::toy(),
            task: TaskSpec::default(),
            schedule,
            epochs: 30,
            steps_per_epoch: 10,
            seed,
            base_lr: 0.1,
            warmup: 40,
            label_smoothing: 0.1,
            dropout: 0.0,
            eval_samples: 128,
            adam: AdamConfig::default(),
            stop_on_failure: true,
            table: UnitCostTable::default(),
            profile: TrafficProfile::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.steps_per_epoch == 0 {
            return Err(Error::Config("steps_per_epoch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) || self.warmup == 0 {
            return Err(Error::Config("base_lr and warmup must be positive".into()));
        }
        let needed = self.spec.batch_size;
        let train = self.task.n_samples
            - (self.task.n_samples as f64 * self.task.valid_fraction).round() as usize;
        if train < needed {
            return Err(Error::Config(format!(
                "{train} training samples cannot fill a batch of {needed}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Converged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    /// Mean training loss over the epoch's completed steps; absent for the
    /// initial evaluation.
    pub train_loss: Option<f64>,
    /// Serialized as `null` when non-finite.
    pub valid_loss: f64,
    pub token_acc: f64,
    pub config: PrecisionConfig,
    pub ledger: LedgerSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DivergenceEvent {
    pub step: u64,
    pub config: PrecisionConfig,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Phase {
    pub config: PrecisionConfig,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub step: u64,
    pub rung: usize,
    pub config: PrecisionConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub epochs: Vec<EpochRecord>,
    /// Schedule positions; a static run has a single entry.
    pub trace: Vec<TraceEntry>,
    /// Completed training steps per consecutive setup.
    pub phases: Vec<Phase>,
    pub events: Vec<DivergenceEvent>,
    pub verdict: Verdict,
    pub steps_completed: u64,
    pub ledger: LedgerSnapshot,
    #[serde(skip)]
    pub cost: CostLedger,
}

impl RunReport {
    pub fn final_record(&self) -> &EpochRecord {
        self.epochs
            .last()
            .expect("a run always records its initial evaluation")
    }

    pub fn final_accuracy(&self) -> f64 {
        self.final_record().token_acc
    }

    pub fn phase_list(&self) -> Vec<(PrecisionConfig, u64)> {
        self.phases.iter().map(|p| (p.config, p.steps)).collect()
    }
}

fn flatten(samples: &[&Sample]) -> (Vec<usize>, Vec<usize>) {
    let tokens = samples
        .iter()
        .flat_map(|s| s.source.iter().copied())
        .collect();
    let targets = samples
        .iter()
        .flat_map(|s| s.target.iter().copied())
        .collect();
    (tokens, targets)
}

/// Validation loss and token accuracy (marker position excluded) under `cfg`.
/// A forward pass that overflows yields a NaN loss and zero accuracy.
pub fn evaluate(
    params: &Params,
    spec: &ModelSpec,
    samples: &[Sample],
    cfg: PrecisionConfig,
    smoothing: f64,
    table: &UnitCostTable,
    profile: &TrafficProfile,
) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let (mut loss_sum, mut correct, mut counted) = (0.0, 0usize, 0usize);
    for chunk in samples.chunks(spec.batch_size) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (tokens, targets) = flatten(&refs);
        let mut ctx = StepContext::inference(cfg, table, profile);
        let logits = match forward(params, spec, &tokens, &mut ctx, None) {
            Ok((logits, _)) => logits,
            Err(Error::NonFinite { .. }) => return Ok((f64::NAN, 0.0)),
            Err(e) => return Err(e),
        };
        let loss = match cross_entropy(&logits, &targets, smoothing) {
            Ok(l) => l,
            Err(Error::NonFinite { .. }) => return Ok((f64::NAN, 0.0)),
            Err(e) => return Err(e),
        };
        loss_sum += loss * targets.len() as f64;
        for (i, (p, t)) in argmax_rows(&logits).iter().zip(&targets).enumerate() {
            if i % spec.seq_len != 0 {
                counted += 1;
                correct += usize::from(p == t);
            }
        }
    }
    let positions = samples.len() * spec.seq_len;
    Ok((loss_sum / positions as f64, correct as f64 / counted as f64))
}

const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_EVALS: u32 = 3;

/// Trains the toy model and reports metrics, schedule trace, and cost.
/// Deterministic given the config.
pub fn train_run(cfg: &TrainConfig) -> Result<RunReport> {
    cfg.validate()?;
    let spec = &cfg.spec;
    let data = make_task(spec.vocab, spec.seq_len, &cfg.task, cfg.seed)?;
    let eval_set: &[Sample] = match cfg.eval_samples {
        0 => &data.valid,
        n => &data.valid[..n.min(data.valid.len())],
    };
    let mut params = Params::init(spec, cfg.seed.wrapping_add(1))?;
    let mut adam = AdamState::new(&params.tensors());
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let (table, profile) = (&cfg.table, &cfg.profile);

    let mut current = cfg.schedule.initial();
    let mut sched = ScheduleState::new();
    let mut ledger = CostLedger::new();
    let mut phases: Vec<Phase> = Vec::new();
    let mut events = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs + 1);

    let (loss0, acc0) = evaluate(
        &params,
        spec,
        eval_set,
        current,
        cfg.label_smoothing,
        table,
        profile,
    )?;
    epochs.push(EpochRecord {
        epoch: 0,
        step: 0,
        train_loss: None,
        valid_loss: loss0,
        token_acc: acc0,
        config: current,
        ledger: ledger.snapshot(),
    });
    info!("{current}: initial valid loss {loss0:.4}, acc {acc0:.4}");

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut cursor = order.len();
    let mut step: u64 = 0;
    let mut bad_evals = 0;
    let mut verdict = Verdict::Converged;

    for epoch in 1..=cfg.epochs {
        let (mut loss_sum, mut done) = (0.0, 0usize);
        for _ in 0..cfg.steps_per_epoch {
            step += 1;
            if cursor + spec.batch_size > order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            let batch: Vec<&Sample> = order[cursor..cursor + spec.batch_size]
                .iter()
                .map(|&i| &data.train[i])
                .collect();
            cursor += spec.batch_size;
            let (tokens, targets) = flatten(&batch);
            let mut ctx = StepContext::new(current, table, profile);
            let dropout = (cfg.dropout > 0.0).then_some(Dropout {
                rate: cfg.dropout,
                rng: &mut dropout_rng,
            });
            match loss_and_grads(
                &params,
                spec,
                &tokens,
                &targets,
                cfg.label_smoothing,
                &mut ctx,
                dropout,
            ) {
                Ok((loss, grads)) => {
                    let lr = lr_schedule(step, cfg.warmup, cfg.base_lr)?;
                    adam_step(
                        &mut params.tensors_mut(),
                        &grads.tensors(),
                        &mut adam,
                        lr,
                        &cfg.adam,
                    )?;
                    costmodel::optimizer_update(
                        &mut ctx.ledger,
                        &CostContext {
                            cfg: &current,
                            table,
                            profile,
                        },
                        params.parameter_count(),
                    );
                    ledger.merge(&ctx.ledger);
                    match phases.last_mut() {
                        Some(p) if p.config == current => p.steps += 1,
                        _ => phases.push(Phase {
                            config: current,
                            steps: 1,
                        }),
                    }
                    loss_sum += loss;
                    done += 1;
                }
                Err(Error::NonFinite { context, .. }) => {
                    warn!("step {step} under {current} overflowed ({context}); update skipped");
                    events.push(DivergenceEvent {
                        step,
                        config: current,
                        reason: format!("non-finite value in {context}"),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let (valid_loss, token_acc) = evaluate(
            &params,
            spec,
            eval_set,
            current,
            cfg.label_smoothing,
            table,
            profile,
        )?;
        let train_loss = (done > 0)
            .then(|| loss_sum / done as f64)
            .filter(|l| l.is_finite());
        debug!("epoch {epoch}: train {train_loss:?}, valid {valid_loss:.4}, acc {token_acc:.4}");
        epochs.push(EpochRecord {
            epoch,
            step,
            train_loss,
            valid_loss,
            token_acc,
            config: current,
            ledger: ledger.snapshot(),
        });

        let diverging = !valid_loss.is_finite()
            || (loss0.is_finite() && valid_loss > DIVERGENCE_FACTOR * loss0);
        bad_evals = if diverging { bad_evals + 1 } else { 0 };
        if diverging {
            events.push(DivergenceEvent {
                step,
                config: current,
                reason: format!("validation loss {valid_loss} after epoch {epoch}"),
            });
        }
        if bad_evals >= DIVERGENCE_EVALS {
            verdict = Verdict::Failed;
            warn!("{current}: declared failed after epoch {epoch}");
            if cfg.stop_on_failure {
                break;
            }
        }
        if let Schedule::Ladder(ladder) = &cfg.schedule {
            current = sched.observe_validation(ladder, step, valid_loss);
        }
    }

    let trace = match &cfg.schedule {
        Schedule::Static(c) => vec![TraceEntry {
            step: 0,
            rung: 0,
            config: *c,
        }],
        Schedule::Ladder(l) => sched
            .trace
            .iter()
            .map(|&(step, rung)| TraceEntry {
                step,
                rung,
                config: l.configs()[rung],
            })
            .collect(),
    };
    Ok(RunReport {
        epochs,
        trace,
        steps_completed: phases.iter().map(|p| p.steps).sum(),
        phases,
        events,
        verdict,
        ledger: ledger.snapshot(),
        cost: ledger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(schedule: Schedule) -> TrainConfig {
        let mut c = TrainConfig::toy(schedule, 5);
        c.spec = ModelSpec {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            d_ff: 32,
            vocab: 8,
            seq_len: 6,
            batch_size: 4,
        };
        c.task.n_samples = 64;
        c.epochs = 2;
        c.steps_per_epoch = 3;
        c.eval_samples = 8;
        c
    }

    #[test]
    fn zero_epochs_records_initial_metrics_only() {
        let mut c = tiny(Schedule::Static(PrecisionConfig::reference()));
        c.epochs = 0;
        let r = train_run(&c).unwrap();
        assert_eq!(r.epochs.len(), 1);
        assert!(r.cost.is_empty());
        assert_eq!(r.steps_completed, 0);
    }

    #[test]
    fn same_seed_same_report() {
        let c = tiny(Schedule::Static(PrecisionConfig::reference()));
        let a = train_run(&c).unwrap();
        assert_eq!(a, train_run(&c).unwrap());
        assert_eq!(a.steps_completed, 6);
        assert_eq!(a.epochs.len(), 3);
    }
}

//! Quantized training: precision setups, quantized GEMM layers with their
//! stash, the toy transformer, Adam, synthetic data, and the training loop.

pub mod data;
pub mod layers;
pub mod model;
pub mod optim;
mod precision;
pub mod stash;
pub mod train;

pub use data::{make_copy_task, make_task, Dataset, Sample, TaskSpec, TaskVariant};
pub use layers::{
    bilinear_backward, bilinear_forward, linear_backward, linear_forward, StepContext,
};
pub use model::{charge_training_step, parameter_count, ModelSpec, Params};
pub use optim::{adam_step, lr_schedule, AdamConfig, AdamState};
pub use precision::PrecisionConfig;
pub use stash::{Operand, Site, StashBuffer, StashKey, StashRecord};
pub use train::{evaluate, train_run, EpochRecord, RunReport, Schedule, TrainConfig, Verdict};

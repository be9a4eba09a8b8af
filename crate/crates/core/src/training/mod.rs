//! Losses, optimizer, sample pool, perturbations and task trainers.

mod log;
mod loss;
mod optim;
mod perturb;
mod pool;
mod spec;
mod trainer;

pub use log::{log_header, median, IterationRecord, LOG_COLUMNS};
pub use loss::{
    l1_loss, mse, mse_loss, one_hot_field, overflow_loss, pixel_ce_loss, pixel_mse_loss, LossKind,
};
pub use optim::{adamw_step, clip_global_norm, cosine_lr, AdamWConfig, AdamWState};
pub use perturb::{perturb_damage, perturb_halfplane, perturb_mutate, random_damage, Axis, Side};
pub use pool::{PoolEntry, SamplePool, TargetRef};
pub use spec::{PoolSpec, Schedule, TrainSpec};
pub use trainer::{DivergenceDump, TrainError, Trainer};

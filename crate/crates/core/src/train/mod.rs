//! Losses, the learning-rate schedule, RAdam, task-sampled joint training
//! and freeze-based language expansion.

pub mod loss;
pub mod optim;
pub mod streams;
pub mod trainer;

pub use loss::{align_loss, dae_loss, mt_loss};
pub use optim::{lr_at, RAdam, RAdamConfig};
pub use streams::BatchStream;
pub use trainer::{
    incremental_train, train, StepReport, TaskKind, TrainConfig, TrainScope, Trainer,
};

//! Sequential training loops and the optimizer.
mod adam;
mod config;
mod trainer;

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use config::{Strategy, TrainConfig};
pub use trainer::{
    run_sequence, seen_categories, train_task, IterationLog, MetricRow, NoObserver, Observer,
    TrainerState,
};

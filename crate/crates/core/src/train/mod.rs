//! Loss, optimizer, training loop and evaluation.

mod adam;
mod eval;
mod loss;
mod trainer;

pub use adam::{clip_global_norm, Adam};
pub use eval::{evaluate_with, repeat_last, seasonal_naive, EvalReport, MetricAccumulator};
pub use loss::{huber_grad, huber_loss};
pub use trainer::{evaluate, train, EpochRecord, TrainConfig, TrainReport};

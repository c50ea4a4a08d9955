//! Variance-regularized training.

pub mod lbfgs;
pub mod loss;
mod train;

pub use lbfgs::{LbfgsConfig, Termination, WolfeParams};
pub use loss::{loss, loss_and_gradient, loss_gradient, Coefficients, LossBreakdown, LossWeights};
pub use train::{
    train_with_repair, initial_model, train, train_best_of, train_from, BaselineMode, IterationRecord, RepairRound,
    TrainConfig, TrainReport,
};

//! Identification of state-space neural networks whose states are ordered by
//! sample variance, reduction to the significant states, and use of the
//! reduced model for EKF state estimation and MPC.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the scalar to `f64`, which is what the CLI uses.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod control;
pub mod data;
pub mod document;
pub mod error;
pub mod experiment;
pub mod model;
pub mod permutation;
pub mod reduction;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Model = model::SsnnModel<f64>;
pub type Model32 = model::SsnnModel<f32>;
pub type Dataset = data::Dataset<f64>;
pub type Trajectory = model::Trajectory<f64>;
pub type VarianceStats = model::VarianceStats<f64>;
pub type LossWeights = training::LossWeights<f64>;
pub type LossBreakdown = training::LossBreakdown<f64>;
pub type TrainReport = training::TrainReport<f64>;
pub type ReducedModel = reduction::ReducedModel<f64>;
pub type SignificanceReport = reduction::SignificanceReport<f64>;

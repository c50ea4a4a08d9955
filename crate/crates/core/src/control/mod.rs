//! State estimation and predictive control with an identified model.

pub mod closed_loop;
pub mod ekf;
pub mod jacobians;
pub mod mpc;
pub mod steady_state;

pub use closed_loop::{
    closed_loop_run, closed_loop_with_plant, quarterly_targets, ClosedLoopConfig, ClosedLoopLog, CstrPlant, LoopRecord,
    ModelPlant, Plant,
};
pub use ekf::{ekf_predict, ekf_step, ekf_update, EkfConfig, EkfState};
pub use jacobians::{model_jacobians, output_jacobian, state_jacobians, Jacobians};
pub use mpc::{mpc_cost, mpc_solve, MpcConfig, MpcSolution};
pub use steady_state::{solve_steady_state, ReferencePair, SteadyStateConfig, STEADY_STATE_TOLERANCE};

//! Open-system dynamics: stochastic photodetection trajectories and the
//! ensemble-averaged master equation.

pub mod master;
pub mod trajectory;

pub use master::{
    block_decompose, run_master, run_master_observed, DensityMatrix, MasterOptions,
    MASTER_DIMENSION_CAP,
};
pub use trajectory::{
    run_ensemble, run_trajectory, run_trajectory_with, Trajectory, TrajectoryConfig,
};

//! Shrinking-horizon MPC for Bolza optimal control problems, with the
//! metrics and regularity checks needed to study how MPC trajectories
//! track the exact optimal solution under measurement and prediction error.

// `!(x >= 0.0)` is used on purpose so that NaN is rejected, and the numeric
// kernels index several same-length buffers in one loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod grid;
pub mod integrate;
pub mod metrics;
pub mod mpc;
pub mod problem;
pub mod problems;
pub mod regularity;
pub mod rng;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{ControlSignal, ExtremalTriple, ParameterSignal, PiecewiseConstant, Trajectory, UniformGrid};
pub use metrics::{dstar, dstar_tau, GammaSet};
pub use mpc::{compare_to_reference, reference_solution, run_mpc, ErrorModel, MpcResult};
pub use problem::{ControlBox, ProblemDef};
pub use solver::{residual_of, solve_ocp, switching_function, Residual, SolveConfig, SolveMode, SolveOutcome};

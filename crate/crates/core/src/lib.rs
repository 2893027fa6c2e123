//! High-precision `ℓ_p` Lewis weights for `p > 2` via rounding-based descent on a
//! regularized log-determinant objective.

pub mod cli;
pub mod error;
pub mod linalg;
pub mod objective;
pub mod solver;
pub mod steps;
pub mod verify;

pub use error::{LewisError, Result};
pub use linalg::{leverage_scores, spd_factorize, DenseMatrix, FactorMethod, Normalization, SpdState, WeightVector};
pub use objective::{gradient, hessian_quadform, objective_value, rho, AlphaParams, Evaluation, RhoVector};
pub use steps::{
    coordinate_objective_delta, descent_step, round_parallel, round_sequential, rounding_condition,
    solve_coordinate_delta, StepSizes,
};
pub use solver::{
    cohen_peng_fixed_point, extract_weights, lewis_meta, lewis_one_step, solve, to_definition_normalization,
    SolverConfig, SolverReport, StepType, TraceEntry, Variant,
};
pub use verify::{
    ellipsoid_containment, lewis_residual, optimality_residual, oracle_solve, residual_report,
    suboptimality_certificate, ResidualReport,
};

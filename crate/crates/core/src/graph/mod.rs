//! Factor-graph container, linearization, sparse elimination and
//! Levenberg-Marquardt MAP optimization.

mod container;
mod factor;
mod key;
mod linear;
mod lm;
mod noise;
mod ordering;
mod values;

pub use container::{Edit, FactorGraph, FactorId, SharedFactor};
pub use factor::{factor_error, gather, Factor, FactorTag};
pub use key::{
    wrap_angle, VariableKey, VariableKind, CONTROL_DIM, HEADING_INDEX, OBSTACLE_DIM, STATE_DIM,
};
pub use linear::{
    linearize, linearize_with, solve_linear, BlockCholesky, JacobianRow, LinearSystem,
    NormalEquations,
};
pub use lm::{gradient_inf_norm, optimize_lm, optimize_lm_frozen, LmConfig, LmResult, LmStats};
pub use noise::NoiseModel;
pub use ordering::{compute_ordering, compute_ordering_excluding, Ordering, OrderingMethod};
pub use values::{Increment, Values};

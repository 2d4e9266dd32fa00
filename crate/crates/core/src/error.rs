use thiserror::Error;

use crate::graph::{FactorId, Values, VariableKey};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("variable {0} is missing from the values")]
    MissingKey(VariableKey),

    #[error("unknown factor id {0}")]
    UnknownFactor(FactorId),

    #[error("dimension mismatch: {what} (expected {expected}, got {actual})")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("covariance is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("factor {factor} produced a non-finite residual or jacobian")]
    NonFiniteFactor { factor: FactorId },

    #[error("linear system is singular even after damping")]
    Singular,

    #[error("non-finite error during optimization after {iterations} iterations")]
    Diverged {
        iterations: usize,
        last_good: Box<Values>,
    },

    #[error("bearing/range undefined: robot and obstacle coincide")]
    Coincident,

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("closed loop A - BK is not Hurwitz (max real eigenvalue {max_real})")]
    NotHurwitz { max_real: f64 },

    #[error("timestep {index} outside horizon 0..={horizon}")]
    StepOutOfRange { index: usize, horizon: usize },

    #[error("measurement index {got} does not match expected planner step {expected}")]
    OutOfOrderMeasurement { expected: usize, got: usize },

    #[error("episode complete: no plan remains after step {0}")]
    EpisodeComplete(usize),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("state diverged (non-finite) at t = {t}")]
    NonFiniteState { t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("scenario parse error: {0}")]
    TomlParse(#[from] toml::de::Error),

    #[error("scenario serialization error: {0}")]
    TomlWrite(#[from] toml::ser::Error),
}

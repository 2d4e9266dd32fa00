use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::key::VariableKey;
use super::noise::NoiseModel;
use super::values::Values;
use crate::error::Result;

/// Which factor of the trajectory posterior a factor node represents.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactorTag {
    /// Generic Gaussian prior on one variable.
    Prior,
    Start,
    Goal,
    StateMeasurement,
    BearingRange,
    Dynamics,
    ControlLimit,
    Obstacle,
}

impl FactorTag {
    pub const ALL: [FactorTag; 8] = [
        FactorTag::Prior,
        FactorTag::Start,
        FactorTag::Goal,
        FactorTag::StateMeasurement,
        FactorTag::BearingRange,
        FactorTag::Dynamics,
        FactorTag::ControlLimit,
        FactorTag::Obstacle,
    ];
}

impl fmt::Display for FactorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FactorTag::Prior => "prior",
            FactorTag::Start => "start",
            FactorTag::Goal => "goal",
            FactorTag::StateMeasurement => "state-measurement",
            FactorTag::BearingRange => "bearing-range",
            FactorTag::Dynamics => "dynamics",
            FactorTag::ControlLimit => "control-limit",
            FactorTag::Obstacle => "obstacle",
        };
        f.write_str(s)
    }
}

/// A factor node: a residual over an ordered list of variables with a Gaussian
/// noise model. Contributes `1/2 |W r|^2` to the graph error.
///
/// `residual` and `jacobians` receive the variable values in `keys()` order.
/// Angle components of the residual are already wrapped.
pub trait Factor: Send + Sync + fmt::Debug {
    fn keys(&self) -> &[VariableKey];

    fn tag(&self) -> FactorTag;

    fn noise(&self) -> &NoiseModel;

    fn residual(&self, vars: &[&DVector<f64>]) -> Result<DVector<f64>>;

    /// One `dim x dim(key)` block per key.
    fn jacobians(&self, vars: &[&DVector<f64>]) -> Result<Vec<DMatrix<f64>>>;

    fn dim(&self) -> usize {
        self.noise().dim()
    }

    /// Residual and jacobians together; override when they share work.
    fn linearize(&self, vars: &[&DVector<f64>]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        Ok((self.residual(vars)?, self.jacobians(vars)?))
    }
}

/// Looks up the factor's variables in `values`.
pub fn gather<'a>(factor: &dyn Factor, values: &'a Values) -> Result<Vec<&'a DVector<f64>>> {
    factor.keys().iter().map(|k| values.at(k)).collect()
}

/// `1/2 |W r|^2` for one factor.
pub fn factor_error(factor: &dyn Factor, values: &Values) -> Result<f64> {
    let vars = gather(factor, values)?;
    let r = factor.residual(&vars)?;
    Ok(0.5 * factor.noise().mahalanobis_sq(&r))
}

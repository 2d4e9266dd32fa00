//! Residuals and jacobians of the trajectory factors: start/goal and state
//! measurement priors, bearing/range to the obstacle, discrete LTI dynamics,
//! hinge control limits and the SDF obstacle cost.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{wrap_angle, Factor, FactorTag, NoiseModel, VariableKey, HEADING_INDEX};
use crate::sdf::{hinge_cost, robot_spheres, Sdf, SphereModel};

/// `value - target`, with angle components wrapped.
pub fn prior_residual(key: VariableKey, value: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
    let mut r = value - target;
    for &c in key.angle_components(r.len()) {
        r[c] = wrap_angle(r[c]);
    }
    r
}

#[derive(Clone, Debug)]
pub struct PriorFactor {
    keys: [VariableKey; 1],
    target: DVector<f64>,
    noise: NoiseModel,
    tag: FactorTag,
}

impl PriorFactor {
    pub fn new(key: VariableKey, target: DVector<f64>, noise: NoiseModel, tag: FactorTag) -> Result<Self> {
        if target.len() != noise.dim() {
            return Err(Error::Dimension {
                what: "prior target",
                expected: noise.dim(),
                actual: target.len(),
            });
        }
        let mut target = target;
        for &c in key.angle_components(target.len()) {
            target[c] = wrap_angle(target[c]);
        }
        Ok(Self {
            keys: [key],
            target,
            noise,
            tag,
        })
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }
}

impl Factor for PriorFactor {
    fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    fn tag(&self) -> FactorTag {
        self.tag
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn residual(&self, vars: &[&DVector<f64>]) -> Result<DVector<f64>> {
        check_dim("prior value", self.target.len(), vars[0].len())?;
        Ok(prior_residual(self.keys[0], vars[0], &self.target))
    }

    fn jacobians(&self, _vars: &[&DVector<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let n = self.target.len();
        Ok(vec![DMatrix::identity(n, n)])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BearingRangeMeas {
    /// Inertial bearing from robot to obstacle, rad.
    pub bearing: f64,
    pub range: f64,
}

/// `(bearing, range)` predicted from planar position `(x, y)` and heading to `l`.
///
/// The range is the norm of the displacement expressed in the body frame; a
/// rotation preserves norms, so it equals the Euclidean distance.
pub fn predict_bearing_range(x: &[f64], l: &[f64]) -> Result<(f64, f64)> {
    let dx = l[0] - x[0];
    let dy = l[1] - x[2];
    let (s, c) = x[HEADING_INDEX].sin_cos();
    let bx = c * dx + s * dy;
    let by = -s * dx + c * dy;
    let range = bx.hypot(by);
    if range <= 1e-9 {
        return Err(Error::Coincident);
    }
    Ok((dy.atan2(dx), range))
}

pub fn bearing_range_residual(x: &[f64], l: &[f64], meas: &BearingRangeMeas) -> Result<[f64; 2]> {
    let (bearing, range) = predict_bearing_range(x, l)?;
    Ok([wrap_angle(bearing - meas.bearing), range - meas.range])
}

/// Bearing and range from a state to the obstacle variable of the same step.
#[derive(Clone, Debug)]
pub struct BearingRangeFactor {
    keys: [VariableKey; 2],
    meas: BearingRangeMeas,
    noise: NoiseModel,
}

impl BearingRangeFactor {
    pub fn new(state: VariableKey, obstacle: VariableKey, meas: BearingRangeMeas, bearing_sigma: f64, range_sigma: f64) -> Result<Self> {
        Ok(Self {
            keys: [state, obstacle],
            meas,
            noise: NoiseModel::from_sigmas(&[bearing_sigma, range_sigma])?,
        })
    }

    pub fn measurement(&self) -> &BearingRangeMeas {
        &self.meas
    }
}

impl Factor for BearingRangeFactor {
    fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    fn tag(&self) -> FactorTag {
        FactorTag::BearingRange
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn residual(&self, vars: &[&DVector<f64>]) -> Result<DVector<f64>> {
        let r = bearing_range_residual(vars[0].as_slice(), vars[1].as_slice(), &self.meas)?;
        Ok(DVector::from_row_slice(&r))
    }

    fn jacobians(&self, vars: &[&DVector<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let x = vars[0];
        let l = vars[1];
        let dx = l[0] - x[0];
        let dy = l[1] - x[2];
        let rho2 = dx * dx + dy * dy;
        let rho = rho2.sqrt();
        if rho <= 1e-9 {
            return Err(Error::Coincident);
        }
        let mut jx = DMatrix::zeros(2, x.len());
        let mut jl = DMatrix::zeros(2, 2);
        // bearing
        jx[(0, 0)] = dy / rho2;
        jx[(0, 2)] = -dx / rho2;
        jl[(0, 0)] = -dy / rho2;
        jl[(0, 1)] = dx / rho2;
        // range; independent of heading
        jx[(1, 0)] = -dx / rho;
        jx[(1, 2)] = -dy / rho;
        jl[(1, 0)] = dx / rho;
        jl[(1, 1)] = dy / rho;
        Ok(vec![jx, jl])
    }
}

/// `x_{i+1} - F_x x_i - F_u u_i` over keys `[x_{i+1}, x_i, u_i]`.
#[derive(Clone, Debug)]
pub struct DynamicsFactor {
    keys: [VariableKey; 3],
    fx: DMatrix<f64>,
    fu: DMatrix<f64>,
    noise: NoiseModel,
}

impl DynamicsFactor {
    pub fn new(next: VariableKey, state: VariableKey, control: VariableKey, fx: DMatrix<f64>, fu: DMatrix<f64>, noise: NoiseModel) -> Result<Self> {
        let n = fx.nrows();
        if fx.ncols() != n || fu.nrows() != n || noise.dim() != n {
            return Err(Error::Dimension {
                what: "dynamics matrices",
                expected: n,
                actual: noise.dim(),
            });
        }
        Ok(Self {
            keys: [next, state, control],
            fx,
            fu,
            noise,
        })
    }
}

pub fn dynamics_residual(next: &DVector<f64>, x: &DVector<f64>, u: &DVector<f64>, fx: &DMatrix<f64>, fu: &DMatrix<f64>) -> DVector<f64> {
    let mut r = next - fx * x - fu * u;
    for &c in VariableKey::state(0).angle_components(r.len()) {
        r[c] = wrap_angle(r[c]);
    }
    r
}

impl Factor for DynamicsFactor {
    fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    fn tag(&self) -> FactorTag {
        FactorTag::Dynamics
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn residual(&self, vars: &[&DVector<f64>]) -> Result<DVector<f64>> {
        check_dim("dynamics state", self.fx.ncols(), vars[1].len())?;
        check_dim("dynamics control", self.fu.ncols(), vars[2].len())?;
        Ok(dynamics_residual(vars[0], vars[1], vars[2], &self.fx, &self.fu))
    }

    fn jacobians(&self, _vars: &[&DVector<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let n = self.fx.nrows();
        Ok(vec![DMatrix::identity(n, n), -&self.fx, -&self.fu])
    }
}

/// Per-component actuator limits with the hinge threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlLimits {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub threshold: Vec<f64>,
}

impl ControlLimits {
    /// Symmetric limits with the threshold at `fraction` of each half-range.
    pub fn symmetric(bounds: &[f64], fraction: f64) -> Self {
        Self {
            lower: bounds.iter().map(|b| -b).collect(),
            upper: bounds.to_vec(),
            threshold: bounds.iter().map(|b| b * fraction).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.lower.len();
        if self.upper.len() != m || self.threshold.len() != m {
            return Err(Error::Scenario("control limit vectors differ in length".into()));
        }
        for j in 0..m {
            let ths = self.threshold[j];
            if !(ths >= 0.0) || !(self.lower[j] + ths < self.upper[j] - ths) {
                return Err(Error::Scenario(format!(
                    "control limit {j}: feasible interior [{} + {ths}, {} - {ths}] is empty",
                    self.lower[j], self.upper[j]
                )));
            }
        }
        Ok(())
    }
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self::symmetric(&[2.0, 2.0, 0.5], 0.05)
    }
}

/// Hinge residual and its diagonal jacobian.
pub fn control_limit_residual(u: &[f64], limits: &ControlLimits) -> (Vec<f64>, Vec<f64>) {
    let mut r = Vec::with_capacity(u.len());
    let mut d = Vec::with_capacity(u.len());
    for (j, &uj) in u.iter().enumerate() {
        let lo = limits.lower[j] + limits.threshold[j];
        let hi = limits.upper[j] - limits.threshold[j];
        if uj < lo {
            r.push(lo - uj);
            d.push(-1.0);
        } else if uj > hi {
            r.push(uj - hi);
            d.push(1.0);
        } else {
            r.push(0.0);
            d.push(if uj == lo {
                -0.5
            } else if uj == hi {
                0.5
            } else {
                0.0
            });
        }
    }
    (r, d)
}

#[derive(Clone, Debug)]
pub struct ControlLimitFactor {
    keys: [VariableKey; 1],
    limits: ControlLimits,
    noise: NoiseModel,
}

impl ControlLimitFactor {
    pub fn new(control: VariableKey, limits: ControlLimits, noise: NoiseModel) -> Result<Self> {
        limits.validate()?;
        check_dim("limit noise", limits.dim(), noise.dim())?;
        Ok(Self {
            keys: [control],
            limits,
            noise,
        })
    }
}

impl Factor for ControlLimitFactor {
    fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    fn tag(&self) -> FactorTag {
        FactorTag::ControlLimit
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn residual(&self, vars: &[&DVector<f64>]) -> Result<DVector<f64>> {
        check_dim("control", self.limits.dim(), vars[0].len())?;
        Ok(DVector::from_vec(control_limit_residual(vars[0].as_slice(), &self.limits).0))
    }

    fn jacobians(&self, vars: &[&DVector<f64>]) -> Result<Vec<DMatrix<f64>>> {
        let (_, d) = control_limit_residual(vars[0].as_slice(), &self.limits);
        Ok(vec![DMatrix::from_diagonal(&DVector::from_vec(d))])
    }
}

/// Hinge cost of each robot sphere against an SDF, per state.
///
/// The obstacle location enters only through the field; the factor touches
/// the state variable alone.
#[derive(Clone, Debug)]
pub struct ObstacleFactor {
    keys: [VariableKey; 1],
    field: Arc<Sdf>,
    spheres: Arc<SphereModel>,
    eps: f64,
    noise: NoiseModel,
}

impl ObstacleFactor {
    pub fn new(state: VariableKey, field: Arc<Sdf>, spheres: Arc<SphereModel>, eps: f64, sigma: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Scenario(format!("safety distance must be positive, got {eps}")));
        }
        let noise = NoiseModel::isotropic(spheres.len(), sigma)?;
        Ok(Self {
            keys: [state],
            field,
            spheres,
            eps,
            noise,
        })
    }

    pub fn field(&self) -> &Arc<Sdf> {
        &self.field
    }

    /// Centre of the obstacle embedded in the field, if any.
    pub fn obstacle_location(&self) -> Option<[f64; 2]> {
        self.field.source().first().map(|c| c.center)
    }

    fn eval(&self, x: &DVector<f64>, with_jacobian: bool) -> (DVector<f64>, DMatrix<f64>) {
        let placed = robot_spheres(x.as_slice(), &self.spheres);
        let mut r = DVector::zeros(placed.len());
        let mut j = DMatrix::zeros(placed.len(), x.len());
        for (row, s) in placed.iter().enumerate() {
            let (d, grad) = self.field.query(s.center);
            let (cost, dc) = hinge_cost(d - s.radius, self.eps);
            r[row] = cost;
            if with_jacobian && dc != 0.0 {
                // d cost / d(x, y, psi) = dc * grad^T * d center / d(x, y, psi)
                for (col, state_idx) in [0, 2, HEADING_INDEX].into_iter().enumerate() {
                    j[(row, state_idx)] = dc * (grad[0] * s.jacobian[(0, col)] + grad[1] * s.jacobian[(1, col)]);
                }
            }
        }
        (r, j)
    }
}

pub fn obstacle_residual(x: &[f64], field: &Sdf, spheres: &SphereModel, eps: f64) -> Vec<f64> {
    robot_spheres(x, spheres)
        .iter()
        .map(|s| hinge_cost(field.query(s.center).0 - s.radius, eps).0)
        .collect()
}

impl Factor for ObstacleFactor {
    fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    fn tag(&self) -> FactorTag {
        FactorTag::Obstacle
    }

    fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    fn residual(&self, vars: &[&DVector<f64>]) -> Result<DVector<f64>> {
        Ok(self.eval(vars[0], false).0)
    }

    fn jacobians(&self, vars: &[&DVector<f64>]) -> Result<Vec<DMatrix<f64>>> {
        Ok(vec![self.eval(vars[0], true).1])
    }

    fn linearize(&self, vars: &[&DVector<f64>]) -> Result<(DVector<f64>, Vec<DMatrix<f64>>)> {
        let (r, j) = self.eval(vars[0], true);
        Ok((r, vec![j]))
    }
}

fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            actual,
        })
    }
}

//! Planar spacecraft model, exact LTI discretization, tracking-gain design and
//! plant propagation.
//!
//! State `[x, vx, y, vy, psi, wpsi]`, control `[fx, fy, tau]`. Translation obeys
//! `m r'' = f` and attitude `I_zz psi'' = tau`, so `A` is three decoupled
//! double integrators and `A^2 = 0`.

use nalgebra::{DMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{wrap_angle, CONTROL_DIM, HEADING_INDEX, STATE_DIM};

pub type StateVec = SVector<f64, STATE_DIM>;
pub type ControlVec = SVector<f64, CONTROL_DIM>;

/// Continuous-time `x' = A x + B u`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub mass: f64,
    pub inertia: f64,
}

pub fn planar_model(mass: f64, inertia: f64) -> Result<ContinuousModel> {
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::InvalidModel(format!("mass must be positive, got {mass}")));
    }
    if !(inertia > 0.0 && inertia.is_finite()) {
        return Err(Error::InvalidModel(format!(
            "inertia must be positive, got {inertia}"
        )));
    }
    let mut a = DMatrix::zeros(STATE_DIM, STATE_DIM);
    let mut b = DMatrix::zeros(STATE_DIM, CONTROL_DIM);
    for axis in 0..3 {
        a[(2 * axis, 2 * axis + 1)] = 1.0;
    }
    b[(1, 0)] = 1.0 / mass;
    b[(3, 1)] = 1.0 / mass;
    b[(5, 2)] = 1.0 / inertia;
    Ok(ContinuousModel {
        a,
        b,
        mass,
        inertia,
    })
}

/// Matrix exponential by scaling and squaring of a Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.iter().map(|v| v.abs()).sum::<f64>().max(0.0);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let a_s = a * scale;
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..=20 {
        term = &term * &a_s / k as f64;
        sum += &term;
        if term.amax() <= f64::EPSILON * 1e-3 * sum.amax() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// `(F_x, F_u)` with `F_x = e^{A dt}` and `F_u = int_0^dt e^{A s} ds B`, both
/// read off the exponential of the augmented matrix `[[A, B], [0, 0]] dt`.
pub fn discretize_lti(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidModel(format!("dt must be positive, got {dt}")));
    }
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::Dimension {
            what: "state-space matrices",
            expected: n,
            actual: b.nrows(),
        });
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = expm(&aug);
    let fx = e.view((0, 0), (n, n)).into_owned();
    let fu = e.view((0, n), (n, m)).into_owned();
    if fx.iter().chain(fu.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("non-finite discretization".into()));
    }
    Ok((fx, fu))
}

/// A continuous model together with its discretization at `dt`.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiModel {
    pub continuous: ContinuousModel,
    pub dt: f64,
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
}

impl LtiModel {
    pub fn new(continuous: ContinuousModel, dt: f64) -> Result<Self> {
        let (fx, fu) = discretize_lti(&continuous.a, &continuous.b, dt)?;
        Ok(Self {
            continuous,
            dt,
            fx,
            fu,
        })
    }

    pub fn planar(mass: f64, inertia: f64, dt: f64) -> Result<Self> {
        Self::new(planar_model(mass, inertia)?, dt)
    }

    /// One exact step `x+ = F_x x + F_u u`, heading re-wrapped.
    pub fn step(&self, x: &StateVec, u: &ControlVec) -> StateVec {
        let mut next = StateVec::zeros();
        for r in 0..STATE_DIM {
            let mut acc = 0.0;
            for c in 0..STATE_DIM {
                acc += self.fx[(r, c)] * x[c];
            }
            for c in 0..CONTROL_DIM {
                acc += self.fu[(r, c)] * u[c];
            }
            next[r] = acc;
        }
        next[HEADING_INDEX] = wrap_angle(next[HEADING_INDEX]);
        next
    }
}

pub fn propagate_plant(x: &StateVec, u: &ControlVec, dt: f64, model: &ContinuousModel) -> Result<StateVec> {
    Ok(LtiModel::new(model.clone(), dt)?.step(x, u))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSpec {
    /// Closed-loop poles per decoupled axis: two for each translation axis,
    /// two for attitude.
    Poles {
        translation: [f64; 2],
        rotation: [f64; 2],
    },
    /// Continuous LQR weights per axis: `(q_position, q_velocity, r)`.
    Quadratic {
        translation: [f64; 3],
        rotation: [f64; 3],
    },
}

impl Default for GainSpec {
    fn default() -> Self {
        GainSpec::Poles {
            translation: [-0.8, -1.2],
            rotation: [-1.0, -1.5],
        }
    }
}

/// State feedback `u = -K x` with `A - B K` Hurwitz.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackGain {
    k: DMatrix<f64>,
}

impl FeedbackGain {
    /// Validates the Hurwitz condition on `A - B K`.
    pub fn new(a: &DMatrix<f64>, b: &DMatrix<f64>, k: DMatrix<f64>) -> Result<Self> {
        let max_real = max_real_eigenvalue(&(a - b * &k));
        if !(max_real < 0.0) {
            return Err(Error::NotHurwitz { max_real });
        }
        Ok(Self { k })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    /// `-K e` for a state error `e`.
    pub fn apply(&self, error: &StateVec) -> ControlVec {
        let mut u = ControlVec::zeros();
        for r in 0..CONTROL_DIM {
            u[r] = -(0..STATE_DIM).map(|c| self.k[(r, c)] * error[c]).sum::<f64>();
        }
        u
    }
}

pub fn max_real_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Designs `K` for a model made of decoupled double integrators, one per input
/// column (the planar model's structure).
pub fn design_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, spec: &GainSpec) -> Result<FeedbackGain> {
    let n = a.nrows();
    let m = b.ncols();
    if n != 2 * m {
        return Err(Error::InvalidModel(
            "gain design expects one double integrator per input".into(),
        ));
    }
    let mut k = DMatrix::zeros(m, n);
    for axis in 0..m {
        let (p, v) = (2 * axis, 2 * axis + 1);
        let gain = b[(v, axis)];
        if a[(p, v)] != 1.0 || gain == 0.0 {
            return Err(Error::InvalidModel(format!(
                "axis {axis} is not a controllable double integrator"
            )));
        }
        let rotation = axis == m - 1 && m == 3;
        let (kp, kv) = match spec {
            GainSpec::Poles {
                translation,
                rotation: rot,
            } => {
                let [p1, p2] = if rotation { *rot } else { *translation };
                // (s - p1)(s - p2) = s^2 + gain kv s + gain kp
                (p1 * p2 / gain, -(p1 + p2) / gain)
            }
            GainSpec::Quadratic {
                translation,
                rotation: rot,
            } => {
                let [q1, q2, r] = if rotation { *rot } else { *translation };
                if !(q1 > 0.0 && q2 >= 0.0 && r > 0.0) {
                    return Err(Error::InvalidModel("LQR weights must be positive".into()));
                }
                // closed-form Riccati solution of the scalar double integrator
                let p12 = (q1 * r).sqrt() / gain.abs();
                let kp = (q1 / r).sqrt() * gain.signum();
                let kv = ((2.0 * p12 + q2) / r).sqrt() * gain.signum();
                (kp, kv)
            }
        };
        k[(axis, p)] = kp;
        k[(axis, v)] = kv;
    }
    FeedbackGain::new(a, b, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn planar_structure() {
        let m = planar_model(2.0, 1.0).unwrap();
        assert_eq!(m.b[(1, 0)], 0.5);
        assert_eq!(m.b[(3, 1)], 0.5);
        assert_eq!(m.b[(5, 2)], 1.0);
        assert!((&m.a * &m.a).amax() == 0.0);
        assert!(planar_model(0.0, 1.0).is_err());
        assert!(planar_model(1.0, -1.0).is_err());
    }

    #[test]
    fn zero_a_discretizes_to_identity() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let (fx, fu) = discretize_lti(&a, &b, 0.3).unwrap();
        assert_eq!(fx, DMatrix::identity(2, 2));
        assert!((fu - &b * 0.3).amax() < 1e-15);
        assert!(discretize_lti(&a, &b, 0.0).is_err());
    }

    #[test]
    fn expm_of_rotation_generator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let e = expm(&(a * 2.0));
        let expect = DMatrix::from_row_slice(2, 2, &[2f64.cos(), -2f64.sin(), 2f64.sin(), 2f64.cos()]);
        assert!((e - expect).amax() < 1e-13);
    }

    #[test]
    fn plant_coasts_and_wraps() {
        let model = planar_model(1.0, 1.0).unwrap();
        let mut x = StateVec::zeros();
        x[1] = 1.0;
        let next = propagate_plant(&x, &ControlVec::zeros(), 0.01, &model).unwrap();
        assert!((next[0] - 0.01).abs() < 1e-15);

        let mut x = StateVec::zeros();
        x[4] = PI - 0.001;
        x[5] = 1.0;
        let next = propagate_plant(&x, &ControlVec::zeros(), 0.01, &model).unwrap();
        assert!(next[4] < 0.0 && next[4] > -PI);
        assert!((next[4] - (PI + 0.009 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn zero_gain_is_rejected() {
        let m = planar_model(1.0, 1.0).unwrap();
        let err = FeedbackGain::new(&m.a, &m.b, DMatrix::zeros(3, 6)).unwrap_err();
        assert!(matches!(err, Error::NotHurwitz { .. }));
    }

    #[test]
    fn lqr_gain_is_hurwitz() {
        let m = planar_model(10.0, 1.0).unwrap();
        let spec = GainSpec::Quadratic {
            translation: [1.0, 1.0, 0.1],
            rotation: [1.0, 0.5, 1.0],
        };
        let k = design_gain(&m.a, &m.b, &spec).unwrap();
        assert!(max_real_eigenvalue(&(&m.a - &m.b * k.matrix())) < 0.0);
    }
}

//! Self-checks behind `scate verify`: finite-difference jacobians for every
//! factor kind, sparse against dense solves, hinge and limit subgradients,
//! discretization identities and closed-loop stability.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{design_gain, discretize_lti, max_real_eigenvalue, planar_model, GainSpec, LtiModel};
use crate::error::Result;
use crate::factors::{
    control_limit_residual, BearingRangeFactor, BearingRangeMeas, ControlLimitFactor, ControlLimits, DynamicsFactor,
    ObstacleFactor, PriorFactor,
};
use crate::graph::{
    linearize_with, optimize_lm, wrap_angle, Factor, FactorGraph, FactorTag, LmConfig, NoiseModel, Ordering,
    SharedFactor, Values, VariableKey, HEADING_INDEX,
};
use crate::planner::{build_initial_graph, initial_guess, PlannerProblem, PlanningMode};
use crate::scenario::{Scenario, PRESETS};
use crate::sdf::{build_sdf, hinge_cost, robot_spheres, Circle, Sdf, Sphere, SphereModel, Workspace};

pub const FD_STEP: f64 = 1e-6;
pub const JACOBIAN_TOL: f64 = 1e-5;
pub const JACOBIAN_POINTS: usize = 100;
pub const DENSE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(suite: &'static str, name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            suite,
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn table(&self) -> String {
        let w = self.checks.iter().map(|c| c.suite.len() + c.name.len() + 3).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let label = format!("{} / {}", c.suite, c.name);
            let _ = writeln!(out, "{} {label:<w$} {}", if c.passed { "PASS" } else { "FAIL" }, c.detail);
        }
        let failed = self.failures().count();
        let _ = writeln!(out, "{} checks, {} failed", self.checks.len(), failed);
        out
    }
}

type Sampler = Box<dyn Fn(&mut ChaCha8Rng) -> Option<Vec<DVector<f64>>> + Send + Sync>;

/// A factor plus a sampler of evaluation points. The sampler returns `None`
/// for points too close to a kink or wrap-around for finite differences.
pub struct JacobianCase {
    pub name: String,
    pub factor: SharedFactor,
    pub sample: Sampler,
}

impl JacobianCase {
    pub fn new(
        name: impl Into<String>,
        factor: SharedFactor,
        sample: impl Fn(&mut ChaCha8Rng) -> Option<Vec<DVector<f64>>> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            factor,
            sample: Box::new(sample),
        }
    }
}

/// Central-difference jacobians of the raw (unwhitened) residual.
pub fn fd_jacobians(factor: &dyn Factor, vars: &[DVector<f64>], step: f64) -> Result<Vec<DMatrix<f64>>> {
    let m = factor.dim();
    let mut out = Vec::with_capacity(vars.len());
    for (b, v) in vars.iter().enumerate() {
        let mut jac = DMatrix::zeros(m, v.len());
        for c in 0..v.len() {
            let mut plus = vars.to_vec();
            let mut minus = vars.to_vec();
            plus[b][c] += step;
            minus[b][c] -= step;
            let rp = factor.residual(&plus.iter().collect::<Vec<_>>())?;
            let rm = factor.residual(&minus.iter().collect::<Vec<_>>())?;
            jac.set_column(c, &((rp - rm) / (2.0 * step)));
        }
        out.push(jac);
    }
    Ok(out)
}

/// Largest entrywise gap between analytic and finite-difference jacobians,
/// relative to the analytic magnitude (floored at 1).
pub fn jacobian_error(factor: &dyn Factor, vars: &[DVector<f64>], step: f64) -> Result<f64> {
    let refs: Vec<&DVector<f64>> = vars.iter().collect();
    let analytic = factor.jacobians(&refs)?;
    let numeric = fd_jacobians(factor, vars, step)?;
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(&numeric) {
        if a.shape() != n.shape() {
            return Ok(f64::INFINITY);
        }
        let scale = a.amax().max(1.0);
        worst = worst.max((a - n).amax() / scale);
    }
    Ok(worst)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_state(rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_vec(vec![
        uniform(rng, 0.5, 3.5),
        uniform(rng, -0.5, 0.5),
        uniform(rng, 0.5, 3.5),
        uniform(rng, -0.5, 0.5),
        uniform(rng, -3.1, 3.1),
        uniform(rng, -0.5, 0.5),
    ])
}

fn far_from_wrap(angle_residual: f64) -> bool {
    angle_residual.abs() < std::f64::consts::PI - 1e-3
}

fn prior_case(tag: FactorTag) -> JacobianCase {
    let mut rng = ChaCha8Rng::seed_from_u64(tag as u64 + 11);
    let target = random_state(&mut rng);
    let target_psi = target[HEADING_INDEX];
    let noise = NoiseModel::from_sigmas(&[0.1, 0.2, 0.1, 0.2, 0.05, 0.1]).expect("positive sigmas");
    let factor = PriorFactor::new(VariableKey::state(1), target, noise, tag).expect("valid prior");
    JacobianCase::new(format!("{tag}"), Arc::new(factor), move |rng| {
        let x = random_state(rng);
        far_from_wrap(wrap_angle(x[HEADING_INDEX] - target_psi)).then(|| vec![x])
    })
}

fn bearing_range_case() -> JacobianCase {
    let meas = BearingRangeMeas {
        bearing: 0.3,
        range: 1.2,
    };
    let factor = BearingRangeFactor::new(VariableKey::state(2), VariableKey::obstacle(2), meas, 0.01, 0.02)
        .expect("valid sigmas");
    JacobianCase::new("bearing-range", Arc::new(factor), move |rng| {
        let x = random_state(rng);
        let l = DVector::from_vec(vec![uniform(rng, 0.0, 4.0), uniform(rng, 0.0, 4.0)]);
        let rho = (l[0] - x[0]).hypot(l[1] - x[2]);
        let bearing = (l[1] - x[2]).atan2(l[0] - x[0]);
        (rho > 0.1 && far_from_wrap(wrap_angle(bearing - meas.bearing))).then(|| vec![x, l])
    })
}

fn dynamics_case() -> JacobianCase {
    let model = LtiModel::planar(10.0, 1.0, 1.0).expect("valid model");
    let (fx, fu) = (model.fx.clone(), model.fu.clone());
    let noise = NoiseModel::isotropic(6, 1e-3).expect("positive sigma");
    let factor = DynamicsFactor::new(
        VariableKey::state(4),
        VariableKey::state(3),
        VariableKey::control(3),
        fx.clone(),
        fu.clone(),
        noise,
    )
    .expect("consistent dimensions");
    JacobianCase::new("dynamics", Arc::new(factor), move |rng| {
        let next = random_state(rng);
        let x = random_state(rng);
        let u = DVector::from_vec(vec![uniform(rng, -2.0, 2.0), uniform(rng, -2.0, 2.0), uniform(rng, -0.5, 0.5)]);
        let r = &next - &fx * &x - &fu * &u;
        far_from_wrap(r[HEADING_INDEX]).then(|| vec![next, x, u])
    })
}

fn control_limit_case() -> JacobianCase {
    let limits = ControlLimits::default();
    let noise = NoiseModel::isotropic(3, 1e-2).expect("positive sigma");
    let factor = ControlLimitFactor::new(VariableKey::control(5), limits.clone(), noise).expect("valid limits");
    JacobianCase::new("control-limit", Arc::new(factor), move |rng| {
        let u: Vec<f64> = (0..3)
            .map(|j| uniform(rng, 1.5 * limits.lower[j], 1.5 * limits.upper[j]))
            .collect();
        let near_kink = (0..3).any(|j| {
            let lo = limits.lower[j] + limits.threshold[j];
            let hi = limits.upper[j] - limits.threshold[j];
            (u[j] - lo).abs() < 1e-4 || (u[j] - hi).abs() < 1e-4
        });
        (!near_kink).then(|| vec![DVector::from_vec(u)])
    })
}

fn near_grid_line(field: &Sdf, p: [f64; 2]) -> bool {
    let o = field.origin();
    (0..2).any(|a| {
        let s = (p[a] - o[a]) / field.cell();
        let f = s - s.floor();
        !(1e-3..=1.0 - 1e-3).contains(&f)
    })
}

fn obstacle_case() -> JacobianCase {
    let workspace = Workspace {
        min: [0.0, 0.0],
        max: [4.0, 4.0],
    };
    let circle = Circle {
        center: [2.0, 2.0],
        radius: 0.3,
    };
    let field = Arc::new(build_sdf(&[circle], &workspace, 0.02, false));
    let spheres = Arc::new(SphereModel {
        spheres: vec![
            Sphere {
                offset: [0.15, 0.05],
                radius: 0.2,
            },
            Sphere {
                offset: [-0.15, 0.0],
                radius: 0.2,
            },
        ],
    });
    let eps = 0.4;
    let factor = ObstacleFactor::new(VariableKey::state(6), field.clone(), spheres.clone(), eps, 0.05).expect("valid");
    JacobianCase::new("obstacle", Arc::new(factor), move |rng| {
        let angle = uniform(rng, -3.1, 3.1);
        let dist = uniform(rng, 0.35, 1.1);
        let mut x = random_state(rng);
        x[0] = 2.0 + dist * angle.cos();
        x[2] = 2.0 + dist * angle.sin();
        let placed = robot_spheres(x.as_slice(), &spheres);
        let bad = placed.iter().any(|s| {
            let d = field.query(s.center).0 - s.radius;
            (d - eps).abs() < 1e-4 || near_grid_line(&field, s.center)
        });
        let active = placed.iter().any(|s| field.query(s.center).0 - s.radius < eps);
        (!bad && active).then(|| vec![x])
    })
}

/// One case per factor tag.
pub fn standard_cases() -> Vec<JacobianCase> {
    vec![
        prior_case(FactorTag::Prior),
        prior_case(FactorTag::Start),
        prior_case(FactorTag::Goal),
        prior_case(FactorTag::StateMeasurement),
        bearing_range_case(),
        dynamics_case(),
        control_limit_case(),
        obstacle_case(),
    ]
}

pub fn jacobian_check(case: &JacobianCase, points: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < points && attempts < 100 * points {
        attempts += 1;
        let Some(vars) = (case.sample)(&mut rng) else {
            continue;
        };
        match jacobian_error(case.factor.as_ref(), &vars, FD_STEP) {
            Ok(e) => worst = worst.max(e),
            Err(e) => return Check::new("jacobian", &case.name, false, format!("evaluation failed: {e}")),
        }
        checked += 1;
    }
    let passed = checked == points && worst < JACOBIAN_TOL;
    Check::new(
        "jacobian",
        &case.name,
        passed,
        format!("{checked} points, max rel err {worst:.2e} (tol {JACOBIAN_TOL:.0e})"),
    )
}

pub fn jacobian_suite(cases: &[JacobianCase], points: usize) -> Vec<Check> {
    let mut checks: Vec<Check> = cases
        .iter()
        .enumerate()
        .map(|(k, c)| jacobian_check(c, points, 1000 + k as u64))
        .collect();
    let missing: Vec<String> = FactorTag::ALL
        .iter()
        .filter(|t| !cases.iter().any(|c| c.factor.tag() == **t))
        .map(|t| t.to_string())
        .collect();
    checks.push(Check::new(
        "jacobian",
        "tag coverage",
        missing.is_empty(),
        if missing.is_empty() {
            format!("all {} factor tags", FactorTag::ALL.len())
        } else {
            format!("missing: {}", missing.join(", "))
        },
    ));
    checks
}

/// Subgradients at the hinge kinks.
pub fn kink_suite() -> Vec<Check> {
    let eps = 0.4;
    let mut checks = vec![Check::new(
        "kink",
        "obstacle hinge at d = eps",
        hinge_cost(eps, eps) == (0.0, -0.5),
        format!("{:?}", hinge_cost(eps, eps)),
    )];
    let limits = ControlLimits::default();
    let lo: Vec<f64> = (0..3).map(|j| limits.lower[j] + limits.threshold[j]).collect();
    let hi: Vec<f64> = (0..3).map(|j| limits.upper[j] - limits.threshold[j]).collect();
    let (r_lo, d_lo) = control_limit_residual(&lo, &limits);
    let (r_hi, d_hi) = control_limit_residual(&hi, &limits);
    checks.push(Check::new(
        "kink",
        "control limit at lower threshold",
        r_lo.iter().all(|r| *r == 0.0) && d_lo.iter().all(|d| *d == -0.5),
        format!("{d_lo:?}"),
    ));
    checks.push(Check::new(
        "kink",
        "control limit at upper threshold",
        r_hi.iter().all(|r| *r == 0.0) && d_hi.iter().all(|d| *d == 0.5),
        format!("{d_hi:?}"),
    ));
    // a point exactly on the kink of the factor itself: jacobian is -0.5 * gradient
    let field = build_sdf(
        &[Circle {
            center: [2.0, 2.0],
            radius: 0.5,
        }],
        &Workspace {
            min: [0.0, 0.0],
            max: [4.0, 4.0],
        },
        0.5,
        false,
    );
    let spheres = SphereModel::single(0.25);
    let x = DVector::from_vec(vec![3.15, 0.0, 2.0, 0.0, 0.0, 0.0]);
    let (d, grad) = field.query([3.15, 2.0]);
    let factor = ObstacleFactor::new(VariableKey::state(0), Arc::new(field), Arc::new(spheres), d - 0.25, 0.05)
        .expect("valid factor");
    let j = factor.jacobians(&[&x]).expect("jacobian");
    let exact = j[0][(0, 0)] == -0.5 * grad[0] && j[0][(0, 2)] == -0.5 * grad[1];
    checks.push(Check::new(
        "kink",
        "obstacle factor on the band edge",
        exact,
        format!("d/dx {:.3}, d/dy {:.3}", j[0][(0, 0)], j[0][(0, 2)]),
    ));
    checks
}

/// Piecewise-linear hinge: zero outside the band, slope -1 inside,
/// continuous, nonincreasing.
pub fn hinge_suite() -> Vec<Check> {
    let eps = 0.4;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ds: Vec<f64> = (0..1000).map(|_| uniform(&mut rng, -1.0, 2.0)).collect();
    let outside = ds.iter().filter(|d| **d > eps).all(|d| hinge_cost(*d, eps) == (0.0, 0.0));
    let inside = ds
        .iter()
        .filter(|d| **d < eps)
        .all(|d| (hinge_cost(*d, eps).0 - (eps - d)).abs() < 1e-15 && hinge_cost(*d, eps).1 == -1.0);
    let mut sorted = ds.clone();
    sorted.sort_by(f64::total_cmp);
    let monotone = sorted.windows(2).all(|w| hinge_cost(w[1], eps).0 <= hinge_cost(w[0], eps).0);
    let continuous = hinge_cost(eps - 1e-12, eps).0 < 1e-11 && hinge_cost(eps, eps).0 == 0.0;
    vec![
        Check::new("hinge", "zero outside the band", outside, ""),
        Check::new("hinge", "eps - d inside the band", inside, ""),
        Check::new("hinge", "nonincreasing", monotone, ""),
        Check::new("hinge", "continuous at eps", continuous, ""),
    ]
}

/// Obstacle-free planning problem with inactive limits.
pub fn obstacle_free_problem(horizon: usize) -> Result<PlannerProblem> {
    let mut scenario = Scenario::preset("static")?;
    scenario.obstacle = None;
    scenario.mode = PlanningMode::Reactive;
    scenario.planner.horizon = horizon;
    scenario.planner.cell = 0.1;
    scenario.robot.limits = ControlLimits::symmetric(&[1e3, 1e3, 1e3], 0.05);
    scenario.planner_problem()
}

/// D-weighted minimum-norm least-squares step from `initial`, computed densely.
pub fn dense_oracle(graph: &FactorGraph, initial: &Values) -> Result<Values> {
    let ordering = Ordering::from_keys(graph.variables().iter().copied().collect());
    let system = linearize_with(graph, initial, &ordering)?;
    let (j, r) = system.to_dense();
    let d: DVector<f64> = DVector::from_iterator(
        j.ncols(),
        j.column_iter().map(|c| c.norm_squared().max(1e-9)),
    );
    let scale = d.map(|v| 1.0 / v.sqrt());
    let js = &j * DMatrix::from_diagonal(&scale);
    let svd = js.svd(true, true);
    let tol = 1e-11 * svd.singular_values.max();
    let y = svd.solve(&(-&r), tol).map_err(|_| crate::Error::Singular)?;
    let delta = scale.component_mul(&y);
    let offsets = system.offsets();
    let slots = system
        .dims()
        .iter()
        .zip(&offsets)
        .map(|(n, o)| delta.rows(*o, *n).into_owned())
        .collect();
    initial.retract(&system.slots_to_increment(slots))
}

pub fn max_relative_gap(a: &Values, b: &Values) -> f64 {
    let scale = b.iter().map(|(_, v)| v.amax()).fold(1.0, f64::max);
    a.iter()
        .map(|(k, v)| match b.get(k) {
            Some(w) => {
                let mut diff = v - w;
                for &c in k.angle_components(diff.len()) {
                    diff[c] = wrap_angle(diff[c]);
                }
                diff.amax() / scale
            }
            None => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

pub fn dense_oracle_suite() -> Vec<Check> {
    [2usize, 3, 5]
        .iter()
        .map(|&n| {
            let outcome = (|| -> Result<(f64, usize)> {
                let problem = obstacle_free_problem(n)?;
                let (graph, _) = build_initial_graph(&problem)?;
                let guess = initial_guess(&problem);
                let sparse = optimize_lm(&graph, &guess, &LmConfig::default())?;
                let dense = dense_oracle(&graph, &guess)?;
                Ok((max_relative_gap(&sparse.values, &dense), sparse.stats.accepted))
            })();
            match outcome {
                Ok((gap, accepted)) => Check::new(
                    "dense-oracle",
                    format!("N = {n}"),
                    gap < DENSE_TOL && accepted == 1,
                    format!("rel gap {gap:.2e}, accepted iterations {accepted}"),
                ),
                Err(e) => Check::new("dense-oracle", format!("N = {n}"), false, e.to_string()),
            }
        })
        .collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn rel_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Semigroup identities `F_x(dt) = F_x(dt/2)^2` and
/// `F_u(dt) = F_x(dt/2) F_u(dt/2) + F_u(dt/2)`.
pub fn semigroup_gap(a: &DMatrix<f64>, b: &DMatrix<f64>, dt: f64) -> f64 {
    match (discretize_lti(a, b, dt), discretize_lti(a, b, dt / 2.0)) {
        (Ok((fx, fu)), Ok((hx, hu))) => rel_gap(&(&hx * &hx), &fx).max(rel_gap(&(&hx * &hu + &hu), &fu)),
        _ => f64::INFINITY,
    }
}

pub fn discretization_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    let (mass, inertia, dt) = (10.0, 1.0, 1.0);
    let closed_form = match LtiModel::planar(mass, inertia, dt) {
        Ok(model) => {
            let mut fx = DMatrix::identity(6, 6);
            let mut fu = DMatrix::zeros(6, 3);
            for axis in 0..3 {
                let inv = if axis == 2 { 1.0 / inertia } else { 1.0 / mass };
                fx[(2 * axis, 2 * axis + 1)] = dt;
                fu[(2 * axis, axis)] = 0.5 * dt * dt * inv;
                fu[(2 * axis + 1, axis)] = dt * inv;
            }
            (&model.fx - fx).amax().max((&model.fu - fu).amax())
        }
        Err(_) => f64::INFINITY,
    };
    checks.push(Check::new(
        "discretization",
        "planar closed form",
        closed_form < 1e-12,
        format!("max gap {closed_form:.1e}"),
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let n = 2 + k % 5;
        let a = if k % 2 == 0 {
            let r = random_matrix(&mut rng, n);
            let shift = max_real_eigenvalue(&r) + 0.5;
            r - DMatrix::identity(n, n) * shift
        } else {
            random_matrix(&mut rng, n).upper_triangle() - DMatrix::from_diagonal(&random_matrix(&mut rng, n).diagonal())
        };
        let b = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        worst = worst.max(semigroup_gap(&a, &b, uniform(&mut rng, 0.1, 2.0)));
    }
    checks.push(Check::new(
        "discretization",
        "semigroup, 20 random stable/nilpotent A",
        worst < 1e-10,
        format!("max gap {worst:.1e}"),
    ));
    checks
}

pub fn hurwitz_suite() -> Vec<Check> {
    let mut specs: Vec<(String, f64, f64, GainSpec)> = vec![
        ("default poles".into(), 10.0, 1.0, GainSpec::default()),
        (
            "quadratic weights".into(),
            10.0,
            1.0,
            GainSpec::Quadratic {
                translation: [4.0, 1.0, 0.5],
                rotation: [2.0, 1.0, 1.0],
            },
        ),
    ];
    for name in PRESETS {
        if let Ok(s) = Scenario::preset(name) {
            specs.push((format!("preset {name}"), s.robot.mass, s.robot.inertia, s.control));
        }
    }
    specs
        .into_iter()
        .map(|(name, mass, inertia, spec)| {
            let outcome = planar_model(mass, inertia).and_then(|m| {
                let k = design_gain(&m.a, &m.b, &spec)?;
                Ok(max_real_eigenvalue(&(&m.a - &m.b * k.matrix())))
            });
            match outcome {
                Ok(re) => Check::new("hurwitz", name, re < 0.0, format!("max Re = {re:.3}")),
                Err(e) => Check::new("hurwitz", name, false, e.to_string()),
            }
        })
        .collect()
}

/// Every suite, with `extra` jacobian cases appended to the standard ones.
pub fn run_with(extra: Vec<JacobianCase>) -> Report {
    let mut cases = standard_cases();
    cases.extend(extra);
    let mut checks = jacobian_suite(&cases, JACOBIAN_POINTS);
    checks.extend(kink_suite());
    checks.extend(hinge_suite());
    checks.extend(dense_oracle_suite());
    checks.extend(discretization_suite());
    checks.extend(hurwitz_suite());
    Report { checks }
}

pub fn run_all() -> Report {
    run_with(Vec::new())
}

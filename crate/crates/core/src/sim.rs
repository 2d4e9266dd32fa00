//! Closed-loop episodes: the plant ticks at its own rate, tracking the latest
//! plan with `u = ǔ - K(z - x̌)`, and the planner runs every
//! `plant_rate / planner_rate` ticks on synthesized measurements.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dynamics::{design_gain, ControlVec, LtiModel, StateVec};
use crate::error::{Error, Result};
use crate::factors::BearingRangeMeas;
use crate::graph::{wrap_angle, HEADING_INDEX, STATE_DIM};
use crate::planner::{MeasurementBundle, NoiseConfig, PlanSnapshot, PlanningMode, ScatePlanner};
use crate::scenario::Scenario;
use crate::sdf::{robot_spheres_of, SphereModel, Workspace};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub position: [f64; 2],
}

/// A circular obstacle moving piecewise-linearly through its waypoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleScript {
    pub radius: f64,
    pub waypoints: Vec<Waypoint>,
}

impl ObstacleScript {
    pub fn fixed(position: [f64; 2], radius: f64) -> Self {
        Self {
            radius,
            waypoints: vec![Waypoint { t: 0.0, position }],
        }
    }

    pub fn validate(&self, workspace: &Workspace) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Scenario("obstacle radius must be positive".into()));
        }
        if self.waypoints.is_empty() {
            return Err(Error::Scenario("obstacle script needs at least one waypoint".into()));
        }
        if self.waypoints.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::Scenario("obstacle waypoint times must strictly increase".into()));
        }
        if let Some(w) = self.waypoints.iter().find(|w| !workspace.contains(w.position)) {
            return Err(Error::Scenario(format!("obstacle waypoint at t = {} lies outside the workspace", w.t)));
        }
        Ok(())
    }
}

/// Ground-truth obstacle position, clamped to the first/last waypoint.
pub fn obstacle_position(script: &ObstacleScript, t: f64) -> [f64; 2] {
    let w = &script.waypoints;
    let first = w[0];
    let last = w[w.len() - 1];
    if t <= first.t {
        return first.position;
    }
    if t >= last.t {
        return last.position;
    }
    let k = w.partition_point(|p| p.t <= t) - 1;
    let (a, b) = (w[k], w[k + 1]);
    let s = (t - a.t) / (b.t - a.t);
    [
        a.position[0] + s * (b.position[0] - a.position[0]),
        a.position[1] + s * (b.position[1] - a.position[1]),
    ]
}

fn gaussian<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    let n: f64 = rng.sample(StandardNormal);
    sigma * n
}

/// Noisy state, bearing and range measurements of the truth. `scale`
/// multiplies every sigma; zero gives exact measurements.
pub fn sample_measurements<R: Rng>(
    index: usize,
    truth: &StateVec,
    obstacle: Option<[f64; 2]>,
    noise: &NoiseConfig,
    scale: f64,
    rng: &mut R,
) -> Result<MeasurementBundle> {
    let mut state = [0.0; STATE_DIM];
    for (k, s) in state.iter_mut().enumerate() {
        *s = truth[k] + gaussian(rng, noise.state[k] * scale);
    }
    state[HEADING_INDEX] = wrap_angle(state[HEADING_INDEX]);
    let obstacle = match obstacle {
        None => None,
        Some(l) => {
            let (dx, dy) = (l[0] - truth[0], l[1] - truth[2]);
            let dist = dx.hypot(dy);
            if dist <= 1e-9 {
                return Err(Error::Coincident);
            }
            let bearing = wrap_angle(dy.atan2(dx) + gaussian(rng, noise.bearing * scale));
            let range = (dist + gaussian(rng, noise.range * scale)).max(0.0);
            Some(BearingRangeMeas { bearing, range })
        }
    };
    Ok(MeasurementBundle { index, state, obstacle })
}

/// Analytic clearance: closest robot sphere surface to the obstacle surface.
pub fn clearance(x: &StateVec, spheres: &SphereModel, obstacle: [f64; 2], obstacle_radius: f64) -> f64 {
    robot_spheres_of(x, spheres)
        .iter()
        .map(|s| (s.center[0] - obstacle[0]).hypot(s.center[1] - obstacle[1]) - s.radius - obstacle_radius)
        .fold(f64::INFINITY, f64::min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub t: f64,
    pub truth: [f64; 6],
    pub u: [f64; 3],
    pub plan_x: [f64; 6],
    pub plan_u: [f64; 3],
    pub clearance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    pub t: f64,
    pub iterations: usize,
    pub accepted: usize,
    pub final_error: f64,
    pub converged: bool,
    pub flagged: bool,
    pub added: usize,
    pub removed: usize,
    pub replacements: usize,
    pub factors: usize,
    pub obstacle_measured: Option<[f64; 2]>,
    /// `l̂_i` right after the step.
    pub obstacle_estimate: Option<[f64; 2]>,
    pub state_estimate: [f64; 6],
}

/// Smoothed past estimates from the last solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub index: usize,
    pub t: f64,
    pub state: [f64; 6],
    pub state_truth: [f64; 6],
    pub obstacle: Option<[f64; 2]>,
    pub obstacle_truth: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub goal_position_error: f64,
    pub goal_attitude_error_deg: f64,
    pub min_clearance: f64,
    pub collision_free: bool,
    pub goal_reached: bool,
    pub tracking_rmse: f64,
    pub flagged_steps: usize,
    pub planner_steps: usize,
}

impl EpisodeSummary {
    pub fn success(&self) -> bool {
        self.collision_free && self.goal_reached
    }
}

pub const GOAL_POSITION_TOL: f64 = 0.1;
pub const GOAL_ATTITUDE_TOL_DEG: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub scenario: String,
    pub mode: PlanningMode,
    pub seed: u64,
    pub ticks: Vec<TickRecord>,
    pub steps: Vec<StepRecord>,
    pub plans: Vec<PlanSnapshot>,
    pub estimates: Vec<EstimateRecord>,
    pub summary: EpisodeSummary,
    /// Planner step wall-clock, ms. Not reproducible.
    pub step_ms: Vec<f64>,
    pub aborted: Option<String>,
}

const CSV_HEADER: [&str; 20] = [
    "t", "x", "vx", "y", "vy", "psi", "wpsi", "fx", "fy", "tau", "plan_x", "plan_vx", "plan_y", "plan_vy", "plan_psi",
    "plan_wpsi", "plan_fx", "plan_fy", "plan_tau", "clearance",
];

impl EpisodeLog {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        for r in &self.ticks {
            let row: Vec<String> = std::iter::once(r.t)
                .chain(r.truth)
                .chain(r.u)
                .chain(r.plan_x)
                .chain(r.plan_u)
                .chain(std::iter::once(r.clearance))
                .map(|v| v.to_string())
                .collect();
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Per-step sidecar. Everything except `timing` is reproducible.
    pub fn sidecar(&self) -> serde_json::Value {
        let mut sorted = self.step_ms.clone();
        sorted.sort_by(f64::total_cmp);
        serde_json::json!({
            "scenario": self.scenario,
            "mode": self.mode,
            "seed": self.seed,
            "summary": self.summary,
            "aborted": self.aborted,
            "steps": self.steps,
            "estimates": self.estimates,
            "timing": {
                "step_ms": self.step_ms,
                "median_ms": median(&sorted),
            },
        })
    }

    pub fn median_step_ms(&self) -> f64 {
        let mut sorted = self.step_ms.clone();
        sorted.sort_by(f64::total_cmp);
        median(&sorted)
    }
}

fn median(sorted: &[f64]) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => sorted[n / 2],
        n => 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]),
    }
}

/// Clearance per logged tick, recomputed from truth and the obstacle script.
/// Infinite when the scenario has no obstacle.
pub fn clearance_profile(log: &EpisodeLog, scenario: &Scenario) -> Vec<f64> {
    log.ticks
        .iter()
        .map(|r| match &scenario.obstacle {
            Some(script) => clearance(
                &StateVec::from(r.truth),
                &scenario.robot.spheres,
                obstacle_position(script, r.t),
                script.radius,
            ),
            None => f64::INFINITY,
        })
        .collect()
}

fn plan_sample(plan: Option<&PlanSnapshot>, t: f64, hold: &StateVec) -> (StateVec, ControlVec) {
    match plan {
        Some(p) => p.sample(t),
        None => (*hold, ControlVec::zeros()),
    }
}

pub fn run_episode(scenario: &Scenario) -> Result<EpisodeLog> {
    scenario.validate()?;
    let problem = scenario.planner_problem()?;
    let horizon = problem.horizon;
    let dt = problem.dt();
    let noise = problem.noise.clone();
    let limits = problem.limits.clone();
    let x_goal = problem.x_goal;
    let continuous = problem.model.continuous.clone();
    let gain = design_gain(&continuous.a, &continuous.b, &scenario.control)?;
    let plant_rate = scenario.sim.plant_rate;
    let plant = LtiModel::new(continuous, 1.0 / plant_rate)?;
    let ticks_per_step = scenario.ticks_per_step();
    let last_tick = ((scenario.duration() * plant_rate).round() as usize).min(horizon * ticks_per_step);
    let scale = scenario.sim.noise_scale;
    let script = scenario.obstacle.clone();
    let spheres = scenario.robot.spheres.clone();

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut planner = ScatePlanner::new(problem)?;
    let mut plan = Some(planner.extract_plan()?);
    let mut log = EpisodeLog {
        scenario: scenario.name.clone(),
        mode: scenario.mode,
        seed: scenario.seed,
        ticks: Vec::with_capacity(last_tick + 1),
        steps: Vec::new(),
        plans: vec![plan.clone().expect("initial plan")],
        estimates: Vec::new(),
        summary: EpisodeSummary {
            goal_position_error: f64::NAN,
            goal_attitude_error_deg: f64::NAN,
            min_clearance: f64::INFINITY,
            collision_free: true,
            goal_reached: false,
            tracking_rmse: 0.0,
            flagged_steps: 0,
            planner_steps: 0,
        },
        step_ms: Vec::new(),
        aborted: None,
    };
    let mut truth_at_step = Vec::with_capacity(horizon + 1);
    let mut x = scenario.start_state();

    for tick in 0..=last_tick {
        let t = tick as f64 / plant_rate;
        if x.iter().any(|v| !v.is_finite()) {
            log.aborted = Some(Error::NonFiniteState { t }.to_string());
            break;
        }
        let l_true = script.as_ref().map(|s| obstacle_position(s, t));
        let z = if tick % ticks_per_step == 0 {
            let index = tick / ticks_per_step;
            let bundle = match sample_measurements(index, &x, l_true, &noise, scale, &mut rng) {
                Ok(b) => b,
                Err(Error::Coincident) => sample_measurements(index, &x, None, &noise, scale, &mut rng)?,
                Err(e) => return Err(e),
            };
            truth_at_step.push((x, l_true));
            let report = planner.step(&bundle)?;
            let sol = planner.solution();
            log.step_ms.push(report.elapsed.as_secs_f64() * 1e3);
            log.steps.push(StepRecord {
                index,
                t,
                iterations: report.stats.iterations,
                accepted: report.stats.accepted,
                final_error: report.stats.final_error,
                converged: report.stats.converged,
                flagged: report.flagged,
                added: report.added,
                removed: report.removed,
                replacements: report.replacements,
                factors: planner.graph().len(),
                obstacle_measured: report.obstacle_measured,
                obstacle_estimate: sol.obstacle(index),
                state_estimate: sol.state(index)?.into(),
            });
            plan = if index < horizon { Some(planner.extract_plan()?) } else { None };
            if let Some(p) = &plan {
                log.plans.push(p.clone());
            }
            StateVec::from(bundle.state)
        } else {
            let b = sample_measurements(0, &x, None, &noise, scale, &mut rng)?;
            StateVec::from(b.state)
        };

        let (x_plan, u_plan) = plan_sample(plan.as_ref(), t, &x_goal);
        let mut err = z - x_plan;
        err[HEADING_INDEX] = wrap_angle(err[HEADING_INDEX]);
        let mut u = u_plan + gain.apply(&err);
        for k in 0..u.len() {
            u[k] = u[k].clamp(limits.lower[k], limits.upper[k]);
        }
        let c = l_true.map_or(f64::INFINITY, |l| {
            clearance(&x, &spheres, l, script.as_ref().map_or(0.0, |s| s.radius))
        });
        log.ticks.push(TickRecord {
            t,
            truth: x.into(),
            u: u.into(),
            plan_x: x_plan.into(),
            plan_u: u_plan.into(),
            clearance: c,
        });
        if tick < last_tick {
            x = plant.step(&x, &u);
        }
    }

    let sol = planner.solution();
    for (i, (xt, lt)) in truth_at_step.iter().enumerate() {
        log.estimates.push(EstimateRecord {
            index: i,
            t: i as f64 * dt,
            state: sol.state(i)?.into(),
            state_truth: (*xt).into(),
            obstacle: sol.obstacle(i),
            obstacle_truth: *lt,
        });
    }
    log.summary = summarize(&log, &x_goal);
    Ok(log)
}

fn summarize(log: &EpisodeLog, goal: &StateVec) -> EpisodeSummary {
    let last = log.ticks.last();
    let (pos_err, att_err) = last.map_or((f64::INFINITY, f64::INFINITY), |r| {
        (
            (r.truth[0] - goal[0]).hypot(r.truth[2] - goal[2]),
            wrap_angle(r.truth[HEADING_INDEX] - goal[HEADING_INDEX]).abs().to_degrees(),
        )
    });
    let min_clearance = log.ticks.iter().map(|r| r.clearance).fold(f64::INFINITY, f64::min);
    let sq: f64 = log
        .ticks
        .iter()
        .map(|r| (r.truth[0] - r.plan_x[0]).powi(2) + (r.truth[2] - r.plan_x[2]).powi(2))
        .sum();
    let tracking_rmse = if log.ticks.is_empty() { 0.0 } else { (sq / log.ticks.len() as f64).sqrt() };
    EpisodeSummary {
        goal_position_error: pos_err,
        goal_attitude_error_deg: att_err,
        min_clearance,
        collision_free: min_clearance > 0.0 && log.aborted.is_none(),
        goal_reached: pos_err < GOAL_POSITION_TOL && att_err < GOAL_ATTITUDE_TOL_DEG,
        tracking_rmse,
        flagged_steps: log.steps.iter().filter(|s| s.flagged).count(),
        planner_steps: log.steps.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn script() -> ObstacleScript {
        ObstacleScript {
            radius: 0.2,
            waypoints: vec![
                Waypoint { t: 0.0, position: [1.0, 1.0] },
                Waypoint { t: 10.0, position: [3.0, 2.0] },
            ],
        }
    }

    #[test]
    fn waypoint_interpolation() {
        let s = script();
        assert_eq!(obstacle_position(&s, 0.0), [1.0, 1.0]);
        assert_eq!(obstacle_position(&s, 10.0), [3.0, 2.0]);
        assert_eq!(obstacle_position(&s, 5.0), [2.0, 1.5]);
        assert_eq!(obstacle_position(&s, -3.0), [1.0, 1.0]);
        assert_eq!(obstacle_position(&s, 99.0), [3.0, 2.0]);
    }

    #[test]
    fn script_validation() {
        let ws = Workspace { min: [0.0, 0.0], max: [4.0, 4.0] };
        assert!(script().validate(&ws).is_ok());
        let mut s = script();
        s.waypoints[1].t = 0.0;
        assert!(s.validate(&ws).is_err());
        let mut s = script();
        s.waypoints[1].position = [5.0, 1.0];
        assert!(s.validate(&ws).is_err());
    }

    #[test]
    fn noiseless_measurements_are_exact() {
        let x = StateVec::from([1.0, 0.1, 1.0, 0.0, 0.3, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = sample_measurements(4, &x, Some([2.0, 2.0]), &NoiseConfig::default(), 0.0, &mut rng).unwrap();
        assert_eq!(b.index, 4);
        assert_eq!(b.state, <[f64; 6]>::from(x));
        let m = b.obstacle.unwrap();
        assert!((m.bearing - std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!((m.range - 2f64.sqrt()).abs() < 1e-15);
        assert!(sample_measurements(0, &x, Some([1.0, 1.0]), &NoiseConfig::default(), 1.0, &mut rng).is_err());
    }

    #[test]
    fn touching_circles_have_zero_clearance() {
        let x = StateVec::from([1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let c = clearance(&x, &SphereModel::single(0.35), [1.6, 1.0], 0.25);
        assert!(c.abs() < 1e-12);
    }
}

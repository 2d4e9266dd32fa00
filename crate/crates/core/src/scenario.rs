//! Episode configuration, read from TOML.
//!
//! Only `workspace`, `start` and `goal` are required:
//!
//! ```toml
//! start = [0.5, 0.0, 0.5, 0.0, 0.0, 0.0]
//! goal = [3.5, 0.0, 3.5, 0.0, 1.5707963267948966, 0.0]
//!
//! [workspace]
//! min = [0.0, 0.0]
//! max = [4.0, 4.0]
//! ```
//!
//! States are `[x, vx, y, vy, psi, wpsi]`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{design_gain, planar_model, GainSpec, LtiModel, StateVec};
use crate::error::{Error, Result};
use crate::factors::ControlLimits;
use crate::graph::LmConfig;
use crate::planner::{FieldConfig, NoiseConfig, ObstacleMode, PlannerProblem, PlanningMode};
use crate::sdf::{SphereModel, Workspace};
use crate::sim::{obstacle_position, ObstacleScript, Waypoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotConfig {
    /// kg
    pub mass: f64,
    /// kg m^2
    pub inertia: f64,
    pub spheres: SphereModel,
    pub limits: ControlLimits,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            mass: 10.0,
            inertia: 1.0,
            spheres: SphereModel::default(),
            limits: ControlLimits::default(),
        }
    }
}

pub const DEFAULT_LAG: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub horizon: usize,
    /// Support-state spacing, s.
    pub dt: f64,
    /// Safety distance of the obstacle hinge, m.
    pub eps: f64,
    /// SDF grid cell, m.
    pub cell: f64,
    /// Treat the workspace boundary as an obstacle surface.
    pub walls: bool,
    pub noise: NoiseConfig,
    pub lm: LmConfig,
    /// Past steps re-solved at each planner step; omit to re-solve all.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lag: Option<usize>,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 60,
            dt: 1.0,
            eps: 0.4,
            cell: 0.02,
            walls: false,
            noise: NoiseConfig::default(),
            lm: LmConfig::default(),
            lag: Some(DEFAULT_LAG),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Hz
    pub plant_rate: f64,
    /// Hz. One planner step per support interval, so this is `1 / dt`.
    pub planner_rate: f64,
    /// Multiplies every measurement sigma when synthesizing measurements.
    pub noise_scale: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            plant_rate: 100.0,
            planner_rate: 1.0,
            noise_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub mode: PlanningMode,
    #[serde(default)]
    pub seed: u64,
    pub start: [f64; 6],
    pub goal: [f64; 6],
    /// Episode length, s. Defaults to the planning horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<f64>,
    pub workspace: Workspace,
    #[serde(default)]
    pub robot: RobotConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub control: GainSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub obstacle: Option<ObstacleScript>,
    #[serde(default)]
    pub sim: SimConfig,
}

pub const PRESETS: [&str; 3] = ["static", "reactive", "predictive"];

impl Scenario {
    pub fn minimal(workspace: Workspace, start: [f64; 6], goal: [f64; 6]) -> Self {
        Self {
            name: String::new(),
            mode: PlanningMode::default(),
            seed: 0,
            start,
            goal,
            duration: None,
            workspace,
            robot: RobotConfig::default(),
            planner: PlannerConfig::default(),
            control: GainSpec::default(),
            obstacle: None,
            sim: SimConfig::default(),
        }
    }

    /// The three reference episodes in a 4 m arena, corner to corner:
    /// `static` (obstacle at the centre), `reactive` (obstacle sweeping across
    /// the straight path) and `predictive` (same sweep, trajectory known).
    pub fn preset(name: &str) -> Result<Self> {
        let arena = Workspace {
            min: [0.0, 0.0],
            max: [4.0, 4.0],
        };
        let start = [0.5, 0.0, 0.5, 0.0, 0.0, 0.0];
        let goal = [3.5, 0.0, 3.5, 0.0, std::f64::consts::FRAC_PI_2, 0.0];
        let mut s = Self::minimal(arena, start, goal);
        s.name = name.to_string();
        let sweep = ObstacleScript {
            radius: 0.25,
            waypoints: vec![
                Waypoint {
                    t: 0.0,
                    position: [3.4, 0.6],
                },
                Waypoint {
                    t: 20.0,
                    position: [3.4, 0.6],
                },
                Waypoint {
                    t: 40.0,
                    position: [0.6, 3.4],
                },
            ],
        };
        match name {
            "static" => {
                s.mode = PlanningMode::Predictive;
                s.obstacle = Some(ObstacleScript::fixed([2.0, 2.0], 0.25));
            }
            "reactive" => {
                s.mode = PlanningMode::Reactive;
                s.obstacle = Some(sweep);
            }
            "predictive" => {
                s.mode = PlanningMode::Predictive;
                s.obstacle = Some(sweep);
            }
            other => return Err(Error::Scenario(format!("unknown preset {other:?}"))),
        }
        Ok(s)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn start_state(&self) -> StateVec {
        StateVec::from(self.start)
    }

    pub fn goal_state(&self) -> StateVec {
        StateVec::from(self.goal)
    }

    pub fn duration(&self) -> f64 {
        self.duration
            .unwrap_or(self.planner.horizon as f64 * self.planner.dt)
    }

    pub fn ticks_per_step(&self) -> usize {
        (self.sim.plant_rate / self.sim.planner_rate).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Scenario(msg.to_string()));
        if !self.workspace.is_valid() {
            return bad("workspace bounds must be finite with max > min");
        }
        for (what, x) in [("start", &self.start), ("goal", &self.goal)] {
            if x.iter().any(|v| !v.is_finite()) || !self.workspace.contains([x[0], x[2]]) {
                return Err(Error::Scenario(format!("{what} must be finite and inside the workspace")));
            }
        }
        let p = &self.planner;
        if p.horizon < 2 {
            return bad("planner.horizon must be at least 2");
        }
        if !(p.dt > 0.0 && p.dt.is_finite()) {
            return bad("planner.dt must be positive");
        }
        if !(p.eps > 0.0) || !(p.cell > 0.0) {
            return bad("planner.eps and planner.cell must be positive");
        }
        p.noise.validate()?;
        self.robot.limits.validate()?;
        self.robot.spheres.validate()?;
        let sim = &self.sim;
        if !(sim.planner_rate > 0.0 && sim.plant_rate.is_finite()) {
            return bad("sim rates must be positive and finite");
        }
        if sim.plant_rate < sim.planner_rate {
            return bad("sim.plant_rate must be at least sim.planner_rate");
        }
        let ratio = sim.plant_rate / sim.planner_rate;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return bad("sim.plant_rate must be an integer multiple of sim.planner_rate");
        }
        if (sim.planner_rate * p.dt - 1.0).abs() > 1e-9 {
            return bad("sim.planner_rate must equal 1 / planner.dt");
        }
        if !(sim.noise_scale >= 0.0 && sim.noise_scale.is_finite()) {
            return bad("sim.noise_scale must be non-negative");
        }
        if let Some(d) = self.duration {
            if !(d > 0.0 && d.is_finite()) {
                return bad("duration must be positive");
            }
        }
        match &self.obstacle {
            Some(script) => script.validate(&self.workspace)?,
            None if self.mode == PlanningMode::Predictive => {
                return bad("predictive mode needs an obstacle script");
            }
            None => {}
        }
        let model = planar_model(self.robot.mass, self.robot.inertia)?;
        design_gain(&model.a, &model.b, &self.control)?;
        Ok(())
    }

    pub fn field_config(&self) -> FieldConfig {
        FieldConfig {
            workspace: self.workspace,
            cell: self.planner.cell,
            obstacle_radius: self.obstacle.as_ref().map_or(0.0, |o| o.radius),
            walls: self.planner.walls,
        }
    }

    pub fn planner_problem(&self) -> Result<PlannerProblem> {
        let p = &self.planner;
        let model = LtiModel::planar(self.robot.mass, self.robot.inertia, p.dt)?;
        let field = self.field_config();
        let mode = match self.mode {
            PlanningMode::Reactive => ObstacleMode::Reactive,
            PlanningMode::Predictive => {
                let script = self
                    .obstacle
                    .as_ref()
                    .ok_or_else(|| Error::Scenario("predictive mode needs an obstacle script".into()))?;
                let positions: Vec<[f64; 2]> = (0..=p.horizon)
                    .map(|k| obstacle_position(script, k as f64 * p.dt))
                    .collect();
                ObstacleMode::Predictive(Arc::new(field.sequence(&positions)?))
            }
        };
        let problem = PlannerProblem {
            model,
            x_start: self.start_state(),
            x_goal: self.goal_state(),
            horizon: p.horizon,
            noise: p.noise.clone(),
            limits: self.robot.limits.clone(),
            spheres: Arc::new(self.robot.spheres.clone()),
            eps: p.eps,
            field,
            mode,
            lm: p.lm.clone(),
            lag: p.lag,
        };
        problem.validate()?;
        Ok(problem)
    }
}

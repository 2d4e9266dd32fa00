//! Online trajectory planning and estimation on one factor graph.
//!
//! The graph starts as a pure plan (start/goal priors, dynamics, control
//! limits and one obstacle factor per support state). Each planner step then
//! folds in that step's measurements, drops the factors that only shaped the
//! now-past plan, refreshes future obstacle costs in reactive mode, and
//! re-solves from the previous solution.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use web_time::Instant;

use crate::dynamics::{ControlVec, LtiModel, StateVec};
use crate::error::{Error, Result};
use crate::factors::{BearingRangeFactor, BearingRangeMeas, ControlLimitFactor, ControlLimits, DynamicsFactor, ObstacleFactor, PriorFactor};
use crate::graph::{
    optimize_lm, optimize_lm_frozen, wrap_angle, Edit, FactorGraph, FactorId, FactorTag, LmConfig, LmStats, NoiseModel, SharedFactor, Values, VariableKey,
    CONTROL_DIM, HEADING_INDEX, STATE_DIM,
};
use crate::sdf::{build_sdf, sdf_for_step, Circle, FieldSource, Sdf, SdfSequence, SphereModel, Workspace};

/// Noise standard deviations of every factor family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Start and goal priors.
    pub fix: f64,
    pub dynamics: f64,
    pub limit: f64,
    pub obstacle: f64,
    /// Per-component state measurement sigmas `[m, m/s, m, m/s, rad, rad/s]`.
    pub state: [f64; STATE_DIM],
    /// Bearing sigma, rad.
    pub bearing: f64,
    /// Range sigma, m.
    pub range: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let half_deg = 0.5f64.to_radians();
        Self {
            fix: 1e-4,
            dynamics: 1e-3,
            limit: 1e-2,
            obstacle: 0.05,
            state: [0.01, 0.01, 0.01, 0.01, half_deg, half_deg],
            bearing: half_deg,
            range: 0.02,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.fix, self.dynamics, self.limit, self.obstacle, self.bearing, self.range];
        if all.iter().chain(self.state.iter()).any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Scenario("noise sigmas must be positive and finite".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanningMode {
    /// Obstacle motion unknown: future costs follow the latest observation.
    #[default]
    Reactive,
    /// Obstacle trajectory known: future costs are assigned up front.
    Predictive,
}

impl std::fmt::Display for PlanningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PlanningMode::Reactive => "reactive",
            PlanningMode::Predictive => "predictive",
        })
    }
}

/// Grid and obstacle geometry used to (re)build fields.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldConfig {
    pub workspace: Workspace,
    pub cell: f64,
    pub obstacle_radius: f64,
    pub walls: bool,
}

impl FieldConfig {
    pub fn build(&self, obstacle: Option<[f64; 2]>) -> Sdf {
        let circles: Vec<Circle> = obstacle
            .map(|center| Circle {
                center,
                radius: self.obstacle_radius,
            })
            .into_iter()
            .collect();
        build_sdf(&circles, &self.workspace, self.cell, self.walls)
    }

    pub fn sequence(&self, positions: &[[f64; 2]]) -> Result<SdfSequence> {
        SdfSequence::new(positions.iter().map(|p| Arc::new(self.build(Some(*p)))).collect())
    }
}

#[derive(Clone, Debug)]
pub enum ObstacleMode {
    Reactive,
    /// Fields for support times `0..=N` from the known obstacle trajectory.
    Predictive(Arc<SdfSequence>),
}

#[derive(Clone, Debug)]
pub struct PlannerProblem {
    pub model: LtiModel,
    pub x_start: StateVec,
    pub x_goal: StateVec,
    pub horizon: usize,
    pub noise: NoiseConfig,
    pub limits: ControlLimits,
    pub spheres: Arc<SphereModel>,
    pub eps: f64,
    pub field: FieldConfig,
    pub mode: ObstacleMode,
    pub lm: LmConfig,
    /// Online steps re-solve only variables with index `>= i - lag`; older
    /// estimates are held. `None` re-solves everything.
    pub lag: Option<usize>,
}

impl PlannerProblem {
    pub fn dt(&self) -> f64 {
        self.model.dt
    }

    pub fn planning_mode(&self) -> PlanningMode {
        match self.mode {
            ObstacleMode::Reactive => PlanningMode::Reactive,
            ObstacleMode::Predictive(_) => PlanningMode::Predictive,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::Scenario(format!("horizon must be at least 2, got {}", self.horizon)));
        }
        self.noise.validate()?;
        self.limits.validate()?;
        self.spheres.validate()?;
        if self.limits.dim() != CONTROL_DIM {
            return Err(Error::Scenario("control limits must have 3 components".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Scenario("safety distance must be positive".into()));
        }
        if let ObstacleMode::Predictive(seq) = &self.mode {
            if seq.len() != self.horizon + 1 {
                return Err(Error::Scenario(format!(
                    "predictive mode needs {} fields, got {}",
                    self.horizon + 1,
                    seq.len()
                )));
            }
        }
        Ok(())
    }

    fn field_source(&self, empty: &Arc<Sdf>) -> FieldSource {
        match &self.mode {
            ObstacleMode::Reactive => FieldSource::Reactive(empty.clone()),
            ObstacleMode::Predictive(seq) => FieldSource::Predictive(seq.clone()),
        }
    }

    fn obstacle_factor(&self, k: usize, field: Arc<Sdf>) -> Result<SharedFactor> {
        Ok(Arc::new(ObstacleFactor::new(
            VariableKey::state(k),
            field,
            self.spheres.clone(),
            self.eps,
            self.noise.obstacle,
        )?))
    }
}

/// Ids of every factor the online loop edits later.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FactorTable {
    pub start: Option<FactorId>,
    pub goal: Option<FactorId>,
    pub dynamics: Vec<FactorId>,
    pub limits: Vec<Option<FactorId>>,
    pub obstacles: Vec<Option<FactorId>>,
    pub state_measurements: Vec<Option<FactorId>>,
    pub bearing_range: Vec<Option<FactorId>>,
}

/// Straight-line guess: states interpolated from start to goal (heading along
/// the shorter arc), all controls zero.
pub fn initial_guess(problem: &PlannerProblem) -> Values {
    let n = problem.horizon;
    let mut values = Values::new();
    let dpsi = wrap_angle(problem.x_goal[HEADING_INDEX] - problem.x_start[HEADING_INDEX]);
    for i in 0..=n {
        let s = i as f64 / n as f64;
        let mut x = problem.x_start + (problem.x_goal - problem.x_start) * s;
        x[HEADING_INDEX] = problem.x_start[HEADING_INDEX] + dpsi * s;
        values.insert(VariableKey::state(i), DVector::from_column_slice(x.as_slice()));
        if i < n {
            values.insert(VariableKey::control(i), DVector::zeros(CONTROL_DIM));
        }
    }
    values
}

pub fn build_initial_graph(problem: &PlannerProblem) -> Result<(FactorGraph, FactorTable)> {
    problem.validate()?;
    let n = problem.horizon;
    let nz = &problem.noise;
    let fix = NoiseModel::isotropic(STATE_DIM, nz.fix)?;
    let dyn_noise = NoiseModel::isotropic(STATE_DIM, nz.dynamics)?;
    let lim_noise = NoiseModel::isotropic(CONTROL_DIM, nz.limit)?;
    let empty = Arc::new(problem.field.build(None));
    let source = problem.field_source(&empty);

    let mut graph = FactorGraph::new();
    let mut table = FactorTable {
        limits: vec![None; n + 1],
        obstacles: vec![None; n + 1],
        state_measurements: vec![None; n + 1],
        bearing_range: vec![None; n + 1],
        ..Default::default()
    };
    table.start = Some(graph.add(Arc::new(PriorFactor::new(
        VariableKey::state(0),
        DVector::from_column_slice(problem.x_start.as_slice()),
        fix.clone(),
        FactorTag::Start,
    )?)));
    table.goal = Some(graph.add(Arc::new(PriorFactor::new(
        VariableKey::state(n),
        DVector::from_column_slice(problem.x_goal.as_slice()),
        fix,
        FactorTag::Goal,
    )?)));
    for i in 0..=n {
        if i < n {
            table.dynamics.push(graph.add(Arc::new(DynamicsFactor::new(
                VariableKey::state(i + 1),
                VariableKey::state(i),
                VariableKey::control(i),
                problem.model.fx.clone(),
                problem.model.fu.clone(),
                dyn_noise.clone(),
            )?)));
            table.limits[i] = Some(graph.add(Arc::new(ControlLimitFactor::new(
                VariableKey::control(i),
                problem.limits.clone(),
                lim_noise.clone(),
            )?)));
        }
        let field = sdf_for_step(&source, i, n)?;
        table.obstacles[i] = Some(graph.add(problem.obstacle_factor(i, field)?));
    }
    Ok((graph, table))
}

/// One step's measurements: the state and, when an obstacle is tracked, its
/// bearing and range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementBundle {
    pub index: usize,
    pub state: [f64; STATE_DIM],
    pub obstacle: Option<BearingRangeMeas>,
}

impl MeasurementBundle {
    /// Obstacle position implied by the measured robot position, bearing and range.
    pub fn obstacle_position(&self) -> Option<[f64; 2]> {
        self.obstacle.map(|m| {
            let (s, c) = m.bearing.sin_cos();
            [self.state[0] + m.range * c, self.state[2] + m.range * s]
        })
    }
}

/// The MAP solution. Variables with index `<= split` are estimates; later
/// ones are the plan.
#[derive(Clone, Debug)]
pub struct MapSolution {
    pub values: Values,
    pub split: Option<usize>,
    pub stats: LmStats,
}

impl MapSolution {
    pub fn state(&self, i: usize) -> Result<StateVec> {
        let v = self.values.at(&VariableKey::state(i))?;
        Ok(StateVec::from_column_slice(v.as_slice()))
    }

    pub fn control(&self, i: usize) -> Result<ControlVec> {
        let v = self.values.at(&VariableKey::control(i))?;
        Ok(ControlVec::from_column_slice(v.as_slice()))
    }

    pub fn obstacle(&self, i: usize) -> Option<[f64; 2]> {
        self.values.get(&VariableKey::obstacle(i)).map(|v| [v[0], v[1]])
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepReport {
    pub index: usize,
    pub added: usize,
    pub removed: usize,
    pub replacements: usize,
    pub stats: LmStats,
    /// Optimizer failed or did not converge.
    pub flagged: bool,
    pub obstacle_measured: Option<[f64; 2]>,
    #[serde(skip)]
    pub elapsed: Duration,
}

/// Plan handed to the plant: `x̌` from the split onwards and `ǔ` per interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSnapshot {
    pub start_index: usize,
    pub t0: f64,
    pub dt: f64,
    /// Estimate at the split; the interpolation anchor for the first interval.
    pub anchor: [f64; STATE_DIM],
    /// Planned states `start_index + 1 ..= N`.
    pub states: Vec<[f64; STATE_DIM]>,
    /// Controls `start_index ..= N - 1`.
    pub controls: Vec<[f64; CONTROL_DIM]>,
    /// Whether each control is still held by its limit factor. After step
    /// `i` the control `u_i` is an estimate and no longer limited.
    pub limited: Vec<bool>,
}

impl PlanSnapshot {
    fn support(&self, k: usize) -> StateVec {
        if k == 0 {
            StateVec::from(self.anchor)
        } else {
            StateVec::from(self.states[k - 1])
        }
    }

    /// Controls still under a limit factor, i.e. the planned `ǔ`.
    pub fn planned_controls(&self) -> impl Iterator<Item = &[f64; CONTROL_DIM]> {
        self.controls.iter().zip(&self.limited).filter(|(_, l)| **l).map(|(u, _)| u)
    }

    pub fn end_time(&self) -> f64 {
        self.t0 + self.controls.len() as f64 * self.dt
    }

    /// `(x̌(t), ǔ(t))`: linear between support states, zero-order hold on
    /// controls. Past the end, the final state and zero control.
    pub fn sample(&self, t: f64) -> (StateVec, ControlVec) {
        let steps = self.controls.len();
        let s = ((t - self.t0) / self.dt).max(0.0);
        if steps == 0 || s >= steps as f64 {
            return (self.support(steps), ControlVec::zeros());
        }
        let k = (s.floor() as usize).min(steps - 1);
        let frac = s - k as f64;
        let a = self.support(k);
        let b = self.support(k + 1);
        let mut x = a + (b - a) * frac;
        x[HEADING_INDEX] = wrap_angle(a[HEADING_INDEX] + wrap_angle(b[HEADING_INDEX] - a[HEADING_INDEX]) * frac);
        (x, ControlVec::from(self.controls[k]))
    }
}

pub struct ScatePlanner {
    problem: PlannerProblem,
    graph: FactorGraph,
    table: FactorTable,
    solution: MapSolution,
    next: usize,
}

impl ScatePlanner {
    /// Builds the initial graph and solves for the initial plan.
    pub fn new(problem: PlannerProblem) -> Result<Self> {
        let (graph, table) = build_initial_graph(&problem)?;
        let guess = initial_guess(&problem);
        let result = optimize_lm(&graph, &guess, &problem.lm)?;
        Ok(Self {
            problem,
            graph,
            table,
            solution: MapSolution {
                values: result.values,
                split: None,
                stats: result.stats,
            },
            next: 0,
        })
    }

    pub fn problem(&self) -> &PlannerProblem {
        &self.problem
    }

    pub fn graph(&self) -> &FactorGraph {
        &self.graph
    }

    pub fn table(&self) -> &FactorTable {
        &self.table
    }

    pub fn solution(&self) -> &MapSolution {
        &self.solution
    }

    /// Index the next measurement bundle must carry.
    pub fn next_index(&self) -> usize {
        self.next
    }

    pub fn is_complete(&self) -> bool {
        self.next > self.problem.horizon
    }

    /// Folds in step `i`'s measurements and re-solves.
    pub fn step(&mut self, meas: &MeasurementBundle) -> Result<StepReport> {
        let began = Instant::now();
        let n = self.problem.horizon;
        let i = meas.index;
        if i != self.next || i > n {
            return Err(Error::OutOfOrderMeasurement {
                expected: self.next,
                got: i,
            });
        }
        let nz = &self.problem.noise;
        let mut edits = Vec::new();
        let mut values = self.solution.values.clone();

        // measurement factors
        edits.push(Edit::Add(Arc::new(PriorFactor::new(
            VariableKey::state(i),
            DVector::from_column_slice(&meas.state),
            NoiseModel::from_sigmas(&nz.state)?,
            FactorTag::StateMeasurement,
        )?)));
        let l_meas = meas.obstacle_position();
        if let (Some(br), Some(l)) = (meas.obstacle, l_meas) {
            edits.push(Edit::Add(Arc::new(BearingRangeFactor::new(
                VariableKey::state(i),
                VariableKey::obstacle(i),
                br,
                nz.bearing,
                nz.range,
            )?)));
            values.insert(VariableKey::obstacle(i), DVector::from_column_slice(&l));
        }
        let added = edits.len();

        // outdated factors
        let mut removed_ids = Vec::new();
        if i == 0 {
            removed_ids.extend(self.table.start);
        }
        if i == n {
            removed_ids.extend(self.table.goal);
        }
        removed_ids.extend(self.table.limits[i]);
        removed_ids.extend(self.table.obstacles[i]);
        let removed = removed_ids.len();
        edits.extend(removed_ids.iter().map(|id| Edit::Remove(*id)));

        // reactive: every future obstacle factor now sees the latest observation
        let mut replacements = 0;
        if matches!(self.problem.mode, ObstacleMode::Reactive) {
            if let Some(l) = l_meas {
                let field = Arc::new(self.problem.field.build(Some(l)));
                for k in i + 1..=n {
                    if let Some(id) = self.table.obstacles[k] {
                        edits.push(Edit::Replace(id, self.problem.obstacle_factor(k, field.clone())?));
                        replacements += 1;
                    }
                }
            }
        }

        let new_ids = self.graph.edit(edits)?;
        self.table.state_measurements[i] = Some(new_ids[0]);
        if new_ids.len() > 1 {
            self.table.bearing_range[i] = Some(new_ids[1]);
        }
        if i == 0 {
            self.table.start = None;
        }
        if i == n {
            self.table.goal = None;
        }
        self.table.limits[i] = None;
        self.table.obstacles[i] = None;

        let frozen: BTreeSet<VariableKey> = match self.problem.lag {
            Some(lag) => values.keys().filter(|k| k.index + lag < i).copied().collect(),
            None => BTreeSet::new(),
        };
        // on failure or non-convergence the previous plan stays in force
        let (values, stats, flagged) = match optimize_lm_frozen(&self.graph, &values, &self.problem.lm, &frozen) {
            Ok(r) if r.stats.converged => (r.values, r.stats, false),
            Ok(r) => (values, r.stats, true),
            Err(_) => (values, LmStats::default(), true),
        };
        self.solution = MapSolution {
            values,
            split: Some(i),
            stats: stats.clone(),
        };
        self.next = i + 1;
        Ok(StepReport {
            index: i,
            added,
            removed,
            replacements,
            stats,
            flagged,
            obstacle_measured: l_meas,
            elapsed: began.elapsed(),
        })
    }

    /// Snapshot of the remaining plan.
    pub fn extract_plan(&self) -> Result<PlanSnapshot> {
        let n = self.problem.horizon;
        let i = self.solution.split.unwrap_or(0);
        if i >= n {
            return Err(Error::EpisodeComplete(i));
        }
        let sol = &self.solution;
        let anchor = sol.state(i)?;
        let states = (i + 1..=n).map(|k| sol.state(k).map(Into::into)).collect::<Result<Vec<_>>>()?;
        let controls = (i..n).map(|k| sol.control(k).map(Into::into)).collect::<Result<Vec<_>>>()?;
        let limited = (i..n).map(|k| self.table.limits[k].is_some()).collect();
        Ok(PlanSnapshot {
            start_index: i,
            t0: i as f64 * self.problem.dt(),
            dt: self.problem.dt(),
            anchor: anchor.into(),
            states,
            controls,
            limited,
        })
    }
}

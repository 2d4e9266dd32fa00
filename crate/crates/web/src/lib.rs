//! Browser bindings for the demo page in `www/`. Every export returns a JSON
//! string; the plain functions behind them are usable (and tested) natively.

use scate::sim::{obstacle_position, ObstacleScript};
use scate::{run_episode, PlanningMode, Result, ScatePlanner, Scenario};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Display grid spacing; coarser than the planner's.
const HEATMAP_CELL: f64 = 0.05;
/// Ticks between samples of the truth trajectory sent to the page.
const TRACE_STRIDE: usize = 10;

fn static_with(x: f64, y: f64, radius: f64) -> Result<Scenario> {
    let mut s = Scenario::preset("static")?;
    s.obstacle = Some(ObstacleScript::fixed([x, y], radius));
    s.validate()?;
    Ok(s)
}

/// SDF heatmap for a single obstacle at `(x, y)`.
pub fn field_json(x: f64, y: f64, radius: f64) -> Result<Value> {
    let mut s = static_with(x, y, radius)?;
    s.planner.cell = HEATMAP_CELL;
    let field = s.field_config().build(Some([x, y]));
    let (nx, ny) = field.shape();
    Ok(json!({
        "origin": field.origin(),
        "cell": field.cell(),
        "nx": nx,
        "ny": ny,
        "eps": s.planner.eps,
        "data": field.data(),
    }))
}

/// Initial plan around a static obstacle at `(x, y)`, before any measurement.
pub fn plan_json(x: f64, y: f64, radius: f64) -> Result<Value> {
    let s = static_with(x, y, radius)?;
    let planner = ScatePlanner::new(s.planner_problem()?)?;
    let plan = planner.extract_plan()?;
    let mut states = vec![plan.anchor];
    states.extend(plan.states.iter().copied());
    Ok(json!({
        "states": states,
        "controls": plan.controls,
        "iterations": planner.solution().stats.iterations,
        "final_error": planner.solution().stats.final_error,
    }))
}

/// Closed-loop episode of a preset, subsampled for drawing.
pub fn episode_json(preset: &str, mode: &str, seed: u64) -> Result<Value> {
    let mut s = Scenario::preset(preset)?;
    s.mode = match mode {
        "reactive" => PlanningMode::Reactive,
        "predictive" => PlanningMode::Predictive,
        other => return Err(scate::Error::Scenario(format!("unknown mode {other}"))),
    };
    s.seed = seed;
    let log = run_episode(&s)?;
    let trace: Vec<Value> = log
        .ticks
        .iter()
        .step_by(TRACE_STRIDE)
        .map(|r| {
            let l = s.obstacle.as_ref().map(|o| obstacle_position(o, r.t));
            json!({ "t": r.t, "x": r.truth[0], "y": r.truth[2], "psi": r.truth[4], "px": r.plan_x[0], "py": r.plan_x[2], "obstacle": l, "clearance": r.clearance })
        })
        .collect();
    let plans: Vec<Value> = log
        .plans
        .iter()
        .map(|p| {
            let xy: Vec<[f64; 2]> = std::iter::once(&p.anchor).chain(&p.states).map(|x| [x[0], x[2]]).collect();
            json!({ "t0": p.t0, "xy": xy })
        })
        .collect();
    Ok(json!({
        "summary": log.summary,
        "median_step_ms": log.median_step_ms(),
        "obstacle_radius": s.obstacle.as_ref().map(|o| o.radius),
        "robot_radius": s.robot.spheres.spheres.iter().map(|sp| sp.radius).fold(0.0, f64::max),
        "goal": [s.goal[0], s.goal[2]],
        "trace": trace,
        "plans": plans,
    }))
}

fn export(v: Result<Value>) -> std::result::Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn field(x: f64, y: f64, radius: f64) -> std::result::Result<String, JsError> {
    export(field_json(x, y, radius))
}

#[wasm_bindgen]
pub fn plan(x: f64, y: f64, radius: f64) -> std::result::Result<String, JsError> {
    export(plan_json(x, y, radius))
}

#[wasm_bindgen]
pub fn episode(preset: &str, mode: &str, seed: u64) -> std::result::Result<String, JsError> {
    export(episode_json(preset, mode, seed))
}

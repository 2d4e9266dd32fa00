use std::collections::BTreeSet;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::container::FactorGraph;
use super::linear::{block_norm, linearize_with, DampedSolve};
use super::key::VariableKey;
use super::ordering::{compute_ordering, compute_ordering_excluding, OrderingMethod};
use super::values::Values;
use crate::error::{Error, Result};

const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e12;
const REFINE_SWEEPS: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub max_iters: usize,
    pub lambda_init: f64,
    pub lambda_scale: f64,
    pub abs_tol: f64,
    pub rel_tol: f64,
    #[serde(skip)]
    pub ordering: OrderingMethod,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            lambda_init: 1e-5,
            lambda_scale: 10.0,
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            ordering: OrderingMethod::MinDegree,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LmStats {
    /// Linearizations performed.
    pub iterations: usize,
    /// Steps that lowered the error by at least the relative tolerance.
    pub accepted: usize,
    pub initial_error: f64,
    pub final_error: f64,
    pub converged: bool,
    /// Norm of the last applied increment.
    pub last_step_norm: f64,
}

#[derive(Clone, Debug)]
pub struct LmResult {
    pub values: Values,
    pub stats: LmStats,
}

/// Levenberg-Marquardt minimization of the graph error starting at `initial`.
///
/// Each iteration linearizes once and factors `H + lambda diag(H)`. Two
/// candidate steps come from that factorization: the plain damped step and
/// the same factorization iterated toward the undamped minimizer. The
/// iterated candidate is tried first; if neither lowers the error, lambda
/// grows and the system is refactored.
pub fn optimize_lm(graph: &FactorGraph, initial: &Values, config: &LmConfig) -> Result<LmResult> {
    optimize_lm_frozen(graph, initial, config, &BTreeSet::new())
}

/// As [`optimize_lm`], holding the variables in `frozen` at their initial
/// values. Factors that touch only frozen variables are skipped entirely;
/// the reported errors still cover the whole graph.
pub fn optimize_lm_frozen(
    full: &FactorGraph,
    initial: &Values,
    config: &LmConfig,
    frozen: &BTreeSet<VariableKey>,
) -> Result<LmResult> {
    let result = minimize(&full.without_frozen(frozen), initial, config, frozen)?;
    if frozen.is_empty() {
        return Ok(result);
    }
    let LmResult { values, mut stats } = result;
    stats.initial_error = full.total_error(initial)?;
    stats.final_error = full.total_error(&values)?;
    Ok(LmResult { values, stats })
}

fn minimize(
    graph: &FactorGraph,
    initial: &Values,
    config: &LmConfig,
    frozen: &BTreeSet<VariableKey>,
) -> Result<LmResult> {
    let mut values = initial.clone();
    let mut error = graph.total_error(&values)?;
    if !error.is_finite() {
        return Err(Error::Diverged {
            iterations: 0,
            last_good: Box::new(values),
        });
    }
    let mut stats = LmStats {
        initial_error: error,
        final_error: error,
        ..Default::default()
    };
    if error < config.abs_tol || graph.is_empty() {
        stats.converged = true;
        return Ok(LmResult { values, stats });
    }

    let ordering = compute_ordering_excluding(graph, config.ordering, frozen);
    let mut lambda = config.lambda_init;

    'outer: while stats.iterations < config.max_iters {
        stats.iterations += 1;
        let system = linearize_with(graph, &values, &ordering)?;
        let normal = system.normal_equations();

        loop {
            let solve = match DampedSolve::new(normal.clone(), lambda) {
                Ok(s) => s,
                Err(Error::Singular) if lambda < LAMBDA_MAX => {
                    lambda *= config.lambda_scale;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let damped = solve.damped_step()?;
            let (refined, solved) = solve.refined_step(&damped, REFINE_SWEEPS)?;
            if solved && solve.model_decrease(&refined) <= config.rel_tol * error {
                // the linear model offers nothing further: stationary point
                stats.converged = true;
                break 'outer;
            }

            let mut best: Option<(Values, f64, f64)> = None;
            for step in [refined, damped] {
                let inc = system.slots_to_increment(step.clone());
                let candidate = values.retract(&inc)?;
                let e = graph.total_error(&candidate)?;
                if !e.is_finite() {
                    continue;
                }
                if e <= error {
                    best = Some((candidate, e, block_norm(&step)));
                    break;
                }
            }

            match best {
                Some((candidate, new_error, step_norm)) => {
                    let decrease = error - new_error;
                    values = candidate;
                    error = new_error;
                    stats.last_step_norm = step_norm;
                    lambda = (lambda / config.lambda_scale).max(LAMBDA_MIN);
                    let small = decrease <= config.rel_tol * (error + decrease);
                    if !small {
                        stats.accepted += 1;
                    }
                    if error < config.abs_tol || small {
                        stats.converged = true;
                        break 'outer;
                    }
                    break;
                }
                None => {
                    if lambda >= LAMBDA_MAX {
                        // no descent at any damping: a (local) minimum up to rounding
                        stats.converged = true;
                        stats.last_step_norm = 0.0;
                        break 'outer;
                    }
                    lambda *= config.lambda_scale;
                }
            }
        }
    }

    if !error.is_finite() {
        return Err(Error::Diverged {
            iterations: stats.iterations,
            last_good: Box::new(values),
        });
    }
    stats.final_error = error;
    Ok(LmResult { values, stats })
}

/// Infinity norm of the whitened gradient `J^T r` at `values`.
pub fn gradient_inf_norm(graph: &FactorGraph, values: &Values) -> Result<f64> {
    let ordering = compute_ordering(graph, OrderingMethod::Natural);
    let system = linearize_with(graph, values, &ordering)?;
    Ok(system
        .gradient()
        .iter()
        .map(DVector::amax)
        .fold(0.0, f64::max))
}

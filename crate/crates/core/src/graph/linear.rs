//! Linearized (Gauss-Newton) systems and their block-sparse Cholesky solve.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};

use super::container::{FactorGraph, FactorId};
use super::factor::gather;
use super::key::VariableKey;
use super::ordering::{compute_ordering, Ordering, OrderingMethod};
use super::values::{Increment, Values};
use crate::error::{Error, Result};

/// Diagonal floor for Marquardt damping, so variables with no information
/// still get a (tiny) positive pivot.
const DAMPING_FLOOR: f64 = 1e-9;

/// One whitened block row `W J` / `W r` of a linearized factor.
#[derive(Clone, Debug)]
pub struct JacobianRow {
    pub factor: FactorId,
    /// `(slot, block)` where `slot` indexes the system ordering.
    pub blocks: Vec<(usize, DMatrix<f64>)>,
    pub residual: DVector<f64>,
}

/// Whitened block Jacobian and residual of a graph about a linearization point.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    ordering: Ordering,
    dims: Vec<usize>,
    rows: Vec<JacobianRow>,
}

pub fn linearize(graph: &FactorGraph, lin_point: &Values) -> Result<LinearSystem> {
    let ordering = compute_ordering(graph, OrderingMethod::MinDegree);
    linearize_with(graph, lin_point, &ordering)
}

/// Linearizes about `lin_point` with the columns of `ordering`. Variables
/// outside the ordering are held constant: their blocks are dropped.
pub fn linearize_with(
    graph: &FactorGraph,
    lin_point: &Values,
    ordering: &Ordering,
) -> Result<LinearSystem> {
    let slots: HashMap<VariableKey, usize> = ordering
        .keys()
        .iter()
        .enumerate()
        .map(|(i, k)| (*k, i))
        .collect();
    let dims = ordering
        .keys()
        .iter()
        .map(|k| lin_point.at(k).map(|v| v.len()))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(graph.len());
    for (id, f) in graph.iter() {
        let vars = gather(f.as_ref(), lin_point)?;
        let (r, jacs) = f.linearize(&vars)?;
        let noise = f.noise();
        if r.len() != noise.dim() {
            return Err(Error::Dimension {
                what: "factor residual",
                expected: noise.dim(),
                actual: r.len(),
            });
        }
        let wr = noise.whiten(&r);
        if wr.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFactor { factor: id });
        }
        let mut blocks = Vec::with_capacity(jacs.len());
        for (key, j) in f.keys().iter().zip(jacs) {
            let Some(&slot) = slots.get(key) else {
                continue;
            };
            if j.nrows() != r.len() || j.ncols() != dims[slot] {
                return Err(Error::Dimension {
                    what: "jacobian block columns",
                    expected: dims[slot],
                    actual: j.ncols(),
                });
            }
            let wj = noise.whiten_matrix(&j);
            if wj.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteFactor { factor: id });
            }
            blocks.push((slot, wj));
        }
        rows.push(JacobianRow {
            factor: id,
            blocks,
            residual: wr,
        });
    }
    Ok(LinearSystem {
        ordering: ordering.clone(),
        dims,
        rows,
    })
}

impl LinearSystem {
    pub fn ordering(&self) -> &Ordering {
        &self.ordering
    }

    pub fn rows(&self) -> &[JacobianRow] {
        &self.rows
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// `1/2 |r|^2` of the whitened residual at the linearization point.
    pub fn error(&self) -> f64 {
        0.5 * self
            .rows
            .iter()
            .map(|r| r.residual.norm_squared())
            .sum::<f64>()
    }

    /// `J^T r` per slot.
    pub fn gradient(&self) -> Vec<DVector<f64>> {
        let mut g: Vec<DVector<f64>> = self.dims.iter().map(|&d| DVector::zeros(d)).collect();
        for row in &self.rows {
            for (slot, j) in &row.blocks {
                g[*slot] += j.transpose() * &row.residual;
            }
        }
        g
    }

    /// Column offsets of each slot in the dense layout.
    pub fn offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.dims
            .iter()
            .map(|d| {
                let o = acc;
                acc += d;
                o
            })
            .collect()
    }

    /// Dense `(J, r)` with columns laid out in ordering order.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let offsets = self.offsets();
        let ncols: usize = self.dims.iter().sum();
        let nrows: usize = self.rows.iter().map(|r| r.residual.len()).sum();
        let mut j = DMatrix::zeros(nrows, ncols);
        let mut r = DVector::zeros(nrows);
        let mut row0 = 0;
        for row in &self.rows {
            let m = row.residual.len();
            r.rows_mut(row0, m).copy_from(&row.residual);
            for (slot, b) in &row.blocks {
                let mut view = j.view_mut((row0, offsets[*slot]), (m, self.dims[*slot]));
                view += b;
            }
            row0 += m;
        }
        (j, r)
    }

    pub fn normal_equations(&self) -> NormalEquations {
        let n = self.dims.len();
        let mut diag: Vec<DMatrix<f64>> = self.dims.iter().map(|&d| DMatrix::zeros(d, d)).collect();
        let mut lower: Vec<BTreeMap<usize, DMatrix<f64>>> = vec![BTreeMap::new(); n];
        let mut rhs: Vec<DVector<f64>> = self.dims.iter().map(|&d| DVector::zeros(d)).collect();
        for row in &self.rows {
            for (a, ja) in &row.blocks {
                rhs[*a] -= ja.transpose() * &row.residual;
                for (b, jb) in &row.blocks {
                    if a == b {
                        diag[*a] += ja.transpose() * ja;
                    } else if a > b {
                        let blk = ja.transpose() * jb;
                        match lower[*b].get_mut(a) {
                            Some(m) => *m += blk,
                            None => {
                                lower[*b].insert(*a, blk);
                            }
                        }
                    }
                }
            }
        }
        NormalEquations { diag, lower, rhs }
    }

    pub fn slots_to_increment(&self, slots: Vec<DVector<f64>>) -> Increment {
        let mut inc = Increment::default();
        for (k, v) in self.ordering.keys().iter().zip(slots) {
            inc.insert(*k, v);
        }
        inc
    }
}

/// `H = J^T J` in block form with right-hand side `-J^T r`.
#[derive(Clone, Debug)]
pub struct NormalEquations {
    pub diag: Vec<DMatrix<f64>>,
    /// `lower[j][i]` holds block `H_ij` for `i > j`.
    pub lower: Vec<BTreeMap<usize, DMatrix<f64>>>,
    pub rhs: Vec<DVector<f64>>,
}

impl NormalEquations {
    /// `H + lambda * diag(H)` (Marquardt scaling, floored).
    pub fn damped(&self, lambda: f64) -> NormalEquations {
        let mut out = self.clone();
        for d in &mut out.diag {
            for i in 0..d.nrows() {
                d[(i, i)] += lambda * d[(i, i)].max(DAMPING_FLOOR);
            }
        }
        out
    }

    pub fn mul(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = self.diag.iter().zip(x).map(|(d, v)| d * v).collect();
        for (j, col) in self.lower.iter().enumerate() {
            for (i, h) in col {
                out[*i] += h * &x[j];
                out[j] += h.transpose() * &x[*i];
            }
        }
        out
    }
}

/// Block-sparse `L L^T` factorization computed in the system ordering.
#[derive(Clone, Debug)]
pub struct BlockCholesky {
    diag: Vec<DMatrix<f64>>,
    lower: Vec<BTreeMap<usize, DMatrix<f64>>>,
}

impl BlockCholesky {
    pub fn factor(h: &NormalEquations) -> Result<Self> {
        let n = h.diag.len();
        let mut diag = h.diag.clone();
        let mut lower = h.lower.clone();
        for j in 0..n {
            let chol = diag[j].clone().cholesky().ok_or(Error::Singular)?;
            let ljj = chol.l();
            let col = std::mem::take(&mut lower[j]);
            // L_ij = H_ij L_jj^-T
            let mut lcol = BTreeMap::new();
            for (i, hij) in col {
                let lij = ljj
                    .solve_lower_triangular(&hij.transpose())
                    .ok_or(Error::Singular)?
                    .transpose();
                lcol.insert(i, lij);
            }
            // Schur complement update of the trailing blocks (creates fill)
            let entries: Vec<(&usize, &DMatrix<f64>)> = lcol.iter().collect();
            for (a, (&i, lij)) in entries.iter().enumerate() {
                diag[i] -= *lij * lij.transpose();
                for (&k, lkj) in entries.iter().take(a) {
                    let upd = *lij * lkj.transpose();
                    match lower[k].get_mut(&i) {
                        Some(m) => *m -= upd,
                        None => {
                            lower[k].insert(i, -upd);
                        }
                    }
                }
            }
            diag[j] = ljj;
            lower[j] = lcol;
        }
        if diag.iter().any(|d| d.iter().any(|v| !v.is_finite())) {
            return Err(Error::Singular);
        }
        Ok(Self { diag, lower })
    }

    /// Number of stored off-diagonal blocks of `L` (fill included).
    pub fn nnz_blocks(&self) -> usize {
        self.lower.iter().map(|c| c.len()).sum()
    }

    pub fn solve(&self, rhs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let n = self.diag.len();
        let mut y: Vec<DVector<f64>> = rhs.to_vec();
        for j in 0..n {
            let yj = self.diag[j]
                .solve_lower_triangular(&y[j])
                .ok_or(Error::Singular)?;
            for (i, lij) in &self.lower[j] {
                y[*i] -= lij * &yj;
            }
            y[j] = yj;
        }
        for j in (0..n).rev() {
            let mut acc = y[j].clone();
            for (i, lij) in &self.lower[j] {
                acc -= lij.transpose() * &y[*i];
            }
            y[j] = self.diag[j]
                .tr_solve_lower_triangular(&acc)
                .ok_or(Error::Singular)?;
        }
        Ok(y)
    }
}

/// Solves `(J^T J + lambda diag(J^T J)) delta = -J^T r`.
pub fn solve_linear(system: &LinearSystem, lambda: f64) -> Result<Increment> {
    let normal = system.normal_equations();
    let chol = BlockCholesky::factor(&normal.damped(lambda))?;
    let x = chol.solve(&normal.rhs)?;
    Ok(system.slots_to_increment(x))
}

/// Damped factorization that can also iterate toward the undamped minimizer.
///
/// Proximal iterations `delta += M^-1 (g - H delta)` with `M = H + lambda D`
/// converge to the `D`-weighted minimum-norm solution of `H delta = g`,
/// reusing one factorization. For full-rank `H` that is the Gauss-Newton
/// step; for rank-deficient `H` the null-space component stays zero.
const STALL_RATIO: f64 = 0.5;
const SOLVED_TOL: f64 = 1e-8;

pub(crate) struct DampedSolve {
    normal: NormalEquations,
    chol: BlockCholesky,
}

impl DampedSolve {
    pub fn new(normal: NormalEquations, lambda: f64) -> Result<Self> {
        let chol = BlockCholesky::factor(&normal.damped(lambda))?;
        Ok(Self { normal, chol })
    }

    pub fn damped_step(&self) -> Result<Vec<DVector<f64>>> {
        self.chol.solve(&self.normal.rhs)
    }

    /// Stops once the normal-equation residual is at rounding level or
    /// no longer shrinks by a useful factor. The flag tells whether the
    /// result solves the undamped system.
    pub fn refined_step(&self, first: &[DVector<f64>], max_sweeps: usize) -> Result<(Vec<DVector<f64>>, bool)> {
        let g_norm = block_norm(&self.normal.rhs);
        let mut x = first.to_vec();
        let mut prev = f64::INFINITY;
        for _ in 0..max_sweeps {
            let res = self.residual(&x);
            let r_norm = block_norm(&res);
            if r_norm <= 1e-12 * g_norm || r_norm > STALL_RATIO * prev {
                break;
            }
            prev = r_norm;
            let corr = self.chol.solve(&res)?;
            for (xi, ci) in x.iter_mut().zip(&corr) {
                *xi += ci;
            }
        }
        let solved = block_norm(&self.residual(&x)) <= SOLVED_TOL * g_norm;
        Ok((x, solved))
    }

    fn residual(&self, x: &[DVector<f64>]) -> Vec<DVector<f64>> {
        let hx = self.normal.mul(x);
        self.normal.rhs.iter().zip(&hx).map(|(g, h)| g - h).collect()
    }

    /// Decrease of the quadratic model `g.d - d.H d / 2` along `step`.
    pub fn model_decrease(&self, step: &[DVector<f64>]) -> f64 {
        let hx = self.normal.mul(step);
        step.iter()
            .zip(&self.normal.rhs)
            .zip(&hx)
            .map(|((d, g), h)| d.dot(g) - 0.5 * d.dot(h))
            .sum()
    }
}

pub(crate) fn block_norm(v: &[DVector<f64>]) -> f64 {
    v.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::super::testing::{between, chain, dense_solution, prior, u};
    use super::super::{compute_ordering, OrderingMethod};
    use super::*;

    fn increment_gap(a: &Increment, b: &Increment) -> f64 {
        a.max_abs_diff(b)
    }

    #[test]
    fn identity_system() {
        let mut g = FactorGraph::new();
        g.add(prior(u(0), &[1.0, 2.0, 3.0], 1.0));
        let mut v = Values::new();
        v.insert(u(0), DVector::zeros(3));
        let delta = solve_linear(&linearize(&g, &v).unwrap(), 0.0).unwrap();
        assert_eq!(delta.get(&u(0)).unwrap(), &DVector::from_vec(vec![1.0, 2.0, 3.0]));
    }

    #[test]
    fn chain_matches_dense_normal_equations() {
        let (g, v) = chain(2);
        let sparse = v.retract(&solve_linear(&linearize(&g, &v).unwrap(), 0.0).unwrap()).unwrap();
        let dense = dense_solution(&g, &v);
        for k in g.variables() {
            assert!((sparse.get(k).unwrap() - dense.get(k).unwrap()).amax() < 1e-12);
        }
    }

    #[test]
    fn ordering_does_not_change_the_step() {
        let (g, v) = chain(6);
        let natural = linearize_with(&g, &v, &compute_ordering(&g, OrderingMethod::Natural)).unwrap();
        let min_deg = linearize(&g, &v).unwrap();
        let mut reversed_keys: Vec<_> = g.variables().iter().copied().collect();
        reversed_keys.reverse();
        let reversed = linearize_with(&g, &v, &Ordering::from_keys(reversed_keys)).unwrap();
        let a = solve_linear(&natural, 0.0).unwrap();
        assert!(increment_gap(&a, &solve_linear(&min_deg, 0.0).unwrap()) < 1e-12);
        assert!(increment_gap(&a, &solve_linear(&reversed, 0.0).unwrap()) < 1e-12);
        assert!((natural.error() - reversed.error()).abs() < 1e-12);
    }

    #[test]
    fn linear_system_is_independent_of_the_point() {
        let (g, v) = chain(3);
        let mut w = v.clone();
        w.insert(u(1), DVector::from_vec(vec![5.0, -1.0, 2.0]));
        let (ja, _) = linearize(&g, &v).unwrap().to_dense();
        let (jb, _) = linearize(&g, &w).unwrap().to_dense();
        assert_eq!(ja, jb);
    }

    #[test]
    fn doubling_covariance_scales_rows() {
        let mut v = Values::new();
        v.insert(u(0), DVector::zeros(3));
        v.insert(u(1), DVector::from_vec(vec![1.0, 1.0, 1.0]));
        let rows = |cov: f64| {
            let mut g = FactorGraph::new();
            g.add(between(u(0), u(1), &[0.5; 3], cov.sqrt()));
            linearize(&g, &v).unwrap().to_dense()
        };
        let (j1, r1) = rows(1.0);
        let (j2, r2) = rows(2.0);
        assert!((j1 / 2f64.sqrt() - j2).amax() < 1e-15);
        assert!((r1 / 2f64.sqrt() - r2).amax() < 1e-15);
    }

    #[test]
    fn cholesky_matches_dense_solve() {
        let (g, v) = chain(5);
        let sys = linearize(&g, &v).unwrap();
        let normal = sys.normal_equations().damped(0.3);
        let x = BlockCholesky::factor(&normal).unwrap().solve(&normal.rhs).unwrap();
        let back = normal.mul(&x);
        for (b, r) in back.iter().zip(&normal.rhs) {
            assert!((b - r).amax() < 1e-10);
        }
    }
}

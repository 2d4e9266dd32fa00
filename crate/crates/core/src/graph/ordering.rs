//! Fill-reducing variable ordering.
//!
//! The heuristic is greedy minimum degree on the variable-connectivity graph
//! (two variables are adjacent when some factor touches both). Each step
//! eliminates the variable with the fewest uneliminated neighbours, connects its
//! neighbours into a clique, and repeats. Ties go to the lowest key.

use std::collections::BTreeSet;

use super::container::FactorGraph;
use super::key::VariableKey;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OrderingMethod {
    #[default]
    MinDegree,
    /// Keys in their natural (timestep-major) order.
    Natural,
}

/// An elimination order over every variable of a graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ordering {
    keys: Vec<VariableKey>,
}

impl Ordering {
    pub fn from_keys(keys: Vec<VariableKey>) -> Self {
        Self { keys }
    }

    pub fn keys(&self) -> &[VariableKey] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

pub fn compute_ordering(graph: &FactorGraph, method: OrderingMethod) -> Ordering {
    compute_ordering_excluding(graph, method, &BTreeSet::new())
}

/// Ordering of the graph's variables except `frozen`, which stay constant.
pub fn compute_ordering_excluding(
    graph: &FactorGraph,
    method: OrderingMethod,
    frozen: &BTreeSet<VariableKey>,
) -> Ordering {
    let keys: Vec<VariableKey> = graph
        .variables()
        .iter()
        .filter(|k| !frozen.contains(k))
        .copied()
        .collect();
    match method {
        OrderingMethod::Natural => Ordering { keys },
        OrderingMethod::MinDegree => min_degree(graph, keys),
    }
}

fn min_degree(graph: &FactorGraph, keys: Vec<VariableKey>) -> Ordering {
    let n = keys.len();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (_, f) in graph.iter() {
        let idx: Vec<usize> = f.keys().iter().filter_map(|k| keys.binary_search(k).ok()).collect();
        for &a in &idx {
            for &b in &idx {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
    }

    let mut alive = vec![true; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&i| alive[i])
            .min_by_key(|&i| (adj[i].len(), i))
            .expect("variables remain");
        alive[v] = false;
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
            for &b in &nbrs {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
        order.push(keys[v]);
    }
    Ordering { keys: order }
}

#[cfg(test)]
mod tests {
    use super::super::testing::{between, chain, prior, u};
    use super::*;

    #[test]
    fn star_hub_goes_last() {
        let mut g = FactorGraph::new();
        for leaf in 0..3 {
            g.add(between(u(9), u(leaf), &[0.0; 3], 1.0));
        }
        g.add(prior(u(2), &[0.0; 3], 1.0));
        let o = compute_ordering(&g, OrderingMethod::MinDegree);
        // hub degree 3, leaves 1; the last pair ties at degree 1 and the lower key goes first
        assert_eq!(o.keys(), &[u(0), u(1), u(2), u(9)]);
    }

    #[test]
    fn deterministic_and_complete() {
        let (g, _) = chain(7);
        let a = compute_ordering(&g, OrderingMethod::MinDegree);
        let b = compute_ordering(&g, OrderingMethod::MinDegree);
        assert_eq!(a, b);
        assert_eq!(a.len(), 7);
        let frozen: BTreeSet<_> = [u(3)].into_iter().collect();
        let c = compute_ordering_excluding(&g, OrderingMethod::MinDegree, &frozen);
        assert_eq!(c.len(), 6);
        assert!(!c.keys().contains(&u(3)));
    }
}

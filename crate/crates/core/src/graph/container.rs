use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::factor::{factor_error, Factor, FactorTag};
use super::key::VariableKey;
use super::values::Values;
use crate::error::{Error, Result};

/// Stable handle to a factor; survives unrelated edits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactorId(pub u64);

impl fmt::Display for FactorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

pub type SharedFactor = Arc<dyn Factor>;

#[derive(Clone, Debug)]
pub enum Edit {
    Add(SharedFactor),
    Remove(FactorId),
    Replace(FactorId, SharedFactor),
}

/// Bipartite graph of factors and the variables they touch.
///
/// Removing a factor never removes variables: a variable whose last factor
/// goes away stays in the graph and is held fixed by the optimizer.
#[derive(Clone, Debug, Default)]
pub struct FactorGraph {
    factors: BTreeMap<FactorId, SharedFactor>,
    variables: BTreeSet<VariableKey>,
    next_id: u64,
}

impl FactorGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, factor: SharedFactor) -> FactorId {
        let id = FactorId(self.next_id);
        self.next_id += 1;
        self.variables.extend(factor.keys().iter().copied());
        self.factors.insert(id, factor);
        id
    }

    pub fn remove(&mut self, id: FactorId) -> Result<SharedFactor> {
        self.factors.remove(&id).ok_or(Error::UnknownFactor(id))
    }

    /// Swaps the factor behind `id`, keeping the id.
    pub fn replace(&mut self, id: FactorId, factor: SharedFactor) -> Result<SharedFactor> {
        let slot = self.factors.get_mut(&id).ok_or(Error::UnknownFactor(id))?;
        self.variables.extend(factor.keys().iter().copied());
        Ok(std::mem::replace(slot, factor))
    }

    /// Applies `edits` in order, all or nothing. Returns the ids of added factors.
    pub fn edit(&mut self, edits: Vec<Edit>) -> Result<Vec<FactorId>> {
        let mut staged = self.clone();
        let mut added = Vec::new();
        for e in edits {
            match e {
                Edit::Add(f) => added.push(staged.add(f)),
                Edit::Remove(id) => {
                    staged.remove(id)?;
                }
                Edit::Replace(id, f) => {
                    staged.replace(id, f)?;
                }
            }
        }
        *self = staged;
        Ok(added)
    }

    pub fn get(&self, id: FactorId) -> Option<&SharedFactor> {
        self.factors.get(&id)
    }

    pub fn contains(&self, id: FactorId) -> bool {
        self.factors.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (FactorId, &SharedFactor)> {
        self.factors.iter().map(|(id, f)| (*id, f))
    }

    pub fn variables(&self) -> &BTreeSet<VariableKey> {
        &self.variables
    }

    pub fn count_tag(&self, tag: FactorTag) -> usize {
        self.factors.values().filter(|f| f.tag() == tag).count()
    }

    /// Factors touching `key`.
    pub fn factors_of(&self, key: VariableKey) -> impl Iterator<Item = (FactorId, &SharedFactor)> {
        self.iter().filter(move |(_, f)| f.keys().contains(&key))
    }

    /// The factors touching at least one variable outside `frozen`, with
    /// their ids.
    pub fn without_frozen(&self, frozen: &BTreeSet<VariableKey>) -> FactorGraph {
        let mut sub = FactorGraph {
            next_id: self.next_id,
            ..Default::default()
        };
        for (id, f) in &self.factors {
            if f.keys().iter().any(|k| !frozen.contains(k)) {
                sub.variables.extend(f.keys().iter().copied());
                sub.factors.insert(*id, f.clone());
            }
        }
        sub
    }

    /// `1/2 sum |W r|^2` over all factors.
    pub fn total_error(&self, values: &Values) -> Result<f64> {
        for k in &self.variables {
            if !values.contains(k) {
                return Err(Error::MissingKey(*k));
            }
        }
        let mut terms = self
            .factors
            .values()
            .map(|f| factor_error(f.as_ref(), values))
            .collect::<Result<Vec<f64>>>()?;
        // order-independent sum, so removing and re-adding a factor is exact
        terms.sort_by(f64::total_cmp);
        Ok(terms.iter().sum())
    }
}

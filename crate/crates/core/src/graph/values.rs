use std::collections::BTreeMap;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::key::{wrap_angle, VariableKey};
use crate::error::{Error, Result};

/// Assignment of a vector to every variable of a graph.
///
/// Angle components (see [`VariableKey::angle_components`]) are kept wrapped to
/// `(-pi, pi]` on every insertion and update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Values {
    entries: BTreeMap<VariableKey, DVector<f64>>,
}

impl Values {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: VariableKey, mut value: DVector<f64>) -> Option<DVector<f64>> {
        wrap_components(key, &mut value);
        self.entries.insert(key, value)
    }

    pub fn get(&self, key: &VariableKey) -> Option<&DVector<f64>> {
        self.entries.get(key)
    }

    pub fn at(&self, key: &VariableKey) -> Result<&DVector<f64>> {
        self.entries.get(key).ok_or(Error::MissingKey(*key))
    }

    pub fn contains(&self, key: &VariableKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn remove(&mut self, key: &VariableKey) -> Option<DVector<f64>> {
        self.entries.remove(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &VariableKey> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VariableKey, &DVector<f64>)> {
        self.entries.iter()
    }

    /// Applies `x <- x + delta` in the vector space, then re-wraps angles.
    pub fn retract(&self, delta: &Increment) -> Result<Values> {
        let mut out = self.clone();
        for (key, d) in delta.iter() {
            let v = out.entries.get_mut(key).ok_or(Error::MissingKey(*key))?;
            if v.len() != d.len() {
                return Err(Error::Dimension {
                    what: "increment",
                    expected: v.len(),
                    actual: d.len(),
                });
            }
            *v += d;
            wrap_components(*key, v);
        }
        Ok(out)
    }
}

fn wrap_components(key: VariableKey, value: &mut DVector<f64>) {
    for &c in key.angle_components(value.len()) {
        value[c] = wrap_angle(value[c]);
    }
}

/// Per-variable step returned by the linear solver.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Increment {
    entries: BTreeMap<VariableKey, DVector<f64>>,
}

impl Increment {
    pub fn insert(&mut self, key: VariableKey, value: DVector<f64>) {
        self.entries.insert(key, value);
    }

    pub fn get(&self, key: &VariableKey) -> Option<&DVector<f64>> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VariableKey, &DVector<f64>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.entries
            .values()
            .map(|v| v.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_diff(&self, other: &Increment) -> f64 {
        let mut worst = 0.0f64;
        for (k, v) in &self.entries {
            let diff = match other.entries.get(k) {
                Some(o) => (v - o).amax(),
                None => v.amax(),
            };
            worst = worst.max(diff);
        }
        for (k, o) in &other.entries {
            if !self.entries.contains_key(k) {
                worst = worst.max(o.amax());
            }
        }
        worst
    }
}

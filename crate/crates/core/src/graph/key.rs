use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};

/// Index of the heading angle inside a planar state vector.
pub const HEADING_INDEX: usize = 4;
/// Dimension of the planar state `[x, vx, y, vy, psi, wpsi]`.
pub const STATE_DIM: usize = 6;
/// Dimension of the planar control `[fx, fy, tau]`.
pub const CONTROL_DIM: usize = 3;
/// Dimension of an obstacle position.
pub const OBSTACLE_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariableKind {
    State,
    Control,
    Obstacle,
}

/// A trajectory variable: one of `x_i`, `u_i` or `l_i`.
///
/// Keys order by timestep first, so the natural ordering of a trajectory graph
/// interleaves `x_i, u_i, l_i` along the chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VariableKey {
    pub kind: VariableKind,
    pub index: usize,
}

impl VariableKey {
    pub const fn state(index: usize) -> Self {
        Self {
            kind: VariableKind::State,
            index,
        }
    }

    pub const fn control(index: usize) -> Self {
        Self {
            kind: VariableKind::Control,
            index,
        }
    }

    pub const fn obstacle(index: usize) -> Self {
        Self {
            kind: VariableKind::Obstacle,
            index,
        }
    }

    /// Components of a value of dimension `dim` stored as angles.
    pub fn angle_components(&self, dim: usize) -> &'static [usize] {
        match (self.kind, dim) {
            (VariableKind::State, STATE_DIM) => &[HEADING_INDEX],
            _ => &[],
        }
    }
}

impl Ord for VariableKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.index, self.kind).cmp(&(other.index, other.kind))
    }
}

impl PartialOrd for VariableKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for VariableKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.kind {
            VariableKind::State => 'x',
            VariableKind::Control => 'u',
            VariableKind::Obstacle => 'l',
        };
        write!(f, "{c}{}", self.index)
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.1 - (-3.1)) - (6.2 - TAU)).abs() < 1e-15);
        assert!((wrap_angle(7.0) - (7.0 - TAU)).abs() < 1e-15);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn keys_order_by_timestep() {
        let mut keys = vec![
            VariableKey::control(1),
            VariableKey::state(2),
            VariableKey::obstacle(0),
            VariableKey::state(0),
        ];
        keys.sort();
        assert_eq!(
            keys,
            vec![
                VariableKey::state(0),
                VariableKey::obstacle(0),
                VariableKey::control(1),
                VariableKey::state(2)
            ]
        );
        assert_eq!(VariableKey::state(3).to_string(), "x3");
    }
}

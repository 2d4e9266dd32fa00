//! Signed distance fields, the hinge collision cost and the sphere robot model.

use std::io::Write;
use std::sync::Arc;

use nalgebra::Matrix2x3;
use serde::{Deserialize, Serialize};

use crate::dynamics::StateVec;
use crate::error::{Error, Result};
use crate::graph::HEADING_INDEX;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Circle {
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        (p[0] - self.center[0]).hypot(p[1] - self.center[1]) - self.radius
    }
}

/// Axis-aligned rectangular workspace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Workspace {
    pub fn diagonal(&self) -> f64 {
        (self.max[0] - self.min[0]).hypot(self.max[1] - self.min[1])
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn is_valid(&self) -> bool {
        (0..2).all(|i| self.max[i] > self.min[i] && self.min[i].is_finite() && self.max[i].is_finite())
    }
}

/// Distance grid sampled at nodes `origin + (ix, iy) * cell`, stored row-major
/// (`data[iy * nx + ix]`). Negative inside obstacles.
#[derive(Clone, Debug, PartialEq)]
pub struct Sdf {
    origin: [f64; 2],
    cell: f64,
    nx: usize,
    ny: usize,
    data: Vec<f64>,
    source: Vec<Circle>,
}

/// Builds the field of a set of circles. With `walls`, distance to the
/// workspace boundary also counts as an obstacle surface.
pub fn build_sdf(obstacles: &[Circle], workspace: &Workspace, cell: f64, walls: bool) -> Sdf {
    assert!(cell > 0.0, "cell must be positive");
    assert!(workspace.is_valid(), "workspace must be nonempty");
    let nx = ((workspace.max[0] - workspace.min[0]) / cell).ceil() as usize + 1;
    let ny = ((workspace.max[1] - workspace.min[1]) / cell).ceil() as usize + 1;
    let sentinel = 10.0 * workspace.diagonal();
    let mut data = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let p = [
                workspace.min[0] + ix as f64 * cell,
                workspace.min[1] + iy as f64 * cell,
            ];
            let mut d = obstacles
                .iter()
                .map(|c| c.distance(p))
                .fold(sentinel, f64::min);
            if walls {
                let wall = (p[0] - workspace.min[0])
                    .min(workspace.max[0] - p[0])
                    .min(p[1] - workspace.min[1])
                    .min(workspace.max[1] - p[1]);
                d = d.min(wall);
            }
            data.push(d);
        }
    }
    Sdf {
        origin: workspace.min,
        cell,
        nx,
        ny,
        data,
        source: obstacles.to_vec(),
    }
}

impl Sdf {
    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Obstacles the field was built from.
    pub fn source(&self) -> &[Circle] {
        &self.source
    }

    pub fn node(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.nx + ix]
    }

    fn upper(&self) -> [f64; 2] {
        [
            self.origin[0] + (self.nx - 1) as f64 * self.cell,
            self.origin[1] + (self.ny - 1) as f64 * self.cell,
        ]
    }

    pub fn same_geometry(&self, other: &Sdf) -> bool {
        self.origin == other.origin && self.cell == other.cell && self.nx == other.nx && self.ny == other.ny
    }

    /// Bilinear distance and its gradient at `p`.
    ///
    /// Outside the grid the value is the boundary value at the clamped point
    /// plus the Euclidean distance to it.
    pub fn query(&self, p: [f64; 2]) -> (f64, [f64; 2]) {
        let hi = self.upper();
        let q = [p[0].clamp(self.origin[0], hi[0]), p[1].clamp(self.origin[1], hi[1])];
        let (d, g) = self.bilinear(q);
        let off = [p[0] - q[0], p[1] - q[1]];
        let dist = off[0].hypot(off[1]);
        if dist == 0.0 {
            return (d, g);
        }
        let mut grad = g;
        for i in 0..2 {
            if off[i] != 0.0 {
                grad[i] = off[i] / dist;
            }
        }
        (d + dist, grad)
    }

    fn bilinear(&self, q: [f64; 2]) -> (f64, [f64; 2]) {
        let fx = (q[0] - self.origin[0]) / self.cell;
        let fy = (q[1] - self.origin[1]) / self.cell;
        let ix = (fx.floor().max(0.0) as usize).min(self.nx.saturating_sub(2));
        let iy = (fy.floor().max(0.0) as usize).min(self.ny.saturating_sub(2));
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        let v00 = self.node(ix, iy);
        let v10 = self.node(ix + 1, iy);
        let v01 = self.node(ix, iy + 1);
        let v11 = self.node(ix + 1, iy + 1);
        let d = (1.0 - tx) * (1.0 - ty) * v00 + tx * (1.0 - ty) * v10 + (1.0 - tx) * ty * v01 + tx * ty * v11;
        let gx = ((1.0 - ty) * (v10 - v00) + ty * (v11 - v01)) / self.cell;
        let gy = ((1.0 - tx) * (v01 - v00) + tx * (v11 - v10)) / self.cell;
        (d, [gx, gy])
    }

    /// CSV grid dump: a header line `origin_x,origin_y,cell,nx,ny` with its
    /// values, then `ny` rows of `nx` distances.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "origin_x,origin_y,cell,nx,ny")?;
        writeln!(w, "{},{},{},{},{}", self.origin[0], self.origin[1], self.cell, self.nx, self.ny)?;
        for row in self.data.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Little-endian binary dump: `origin_x, origin_y, cell` as f64,
    /// `nx, ny` as u64, then the row-major f64 data.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        for v in [self.origin[0], self.origin[1], self.cell] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.nx as u64).to_le_bytes())?;
        w.write_all(&(self.ny as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

/// Hinge cost `eps - d` inside the danger band `d <= eps`, zero outside.
///
/// Returns `(cost, dcost/dd)`; the derivative at the kink `d == eps` is -0.5.
pub fn hinge_cost(d: f64, eps: f64) -> (f64, f64) {
    if d < eps {
        (eps - d, -1.0)
    } else if d == eps {
        (0.0, -0.5)
    } else {
        (0.0, 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sphere {
    /// Body-frame offset of the sphere centre.
    pub offset: [f64; 2],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SphereModel {
    pub spheres: Vec<Sphere>,
}

impl SphereModel {
    pub fn single(radius: f64) -> Self {
        Self {
            spheres: vec![Sphere {
                offset: [0.0, 0.0],
                radius,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.spheres.is_empty() {
            return Err(Error::Scenario("sphere model needs at least one sphere".into()));
        }
        if self.spheres.iter().any(|s| !(s.radius > 0.0)) {
            return Err(Error::Scenario("sphere radii must be positive".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.spheres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spheres.is_empty()
    }
}

impl Default for SphereModel {
    fn default() -> Self {
        Self::single(0.35)
    }
}

/// A sphere placed in the workspace, with the jacobian of its centre with
/// respect to `(x, y, psi)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlacedSphere {
    pub center: [f64; 2],
    pub radius: f64,
    pub jacobian: Matrix2x3<f64>,
}

pub fn robot_spheres(x: &[f64], model: &SphereModel) -> Vec<PlacedSphere> {
    let (px, py, psi) = (x[0], x[2], x[HEADING_INDEX]);
    let (s, c) = psi.sin_cos();
    model
        .spheres
        .iter()
        .map(|sp| {
            let [ox, oy] = sp.offset;
            let center = [px + c * ox - s * oy, py + s * ox + c * oy];
            let jacobian = Matrix2x3::new(1.0, 0.0, -s * ox - c * oy, 0.0, 1.0, c * ox - s * oy);
            PlacedSphere {
                center,
                radius: sp.radius,
                jacobian,
            }
        })
        .collect()
}

pub fn robot_spheres_of(x: &StateVec, model: &SphereModel) -> Vec<PlacedSphere> {
    robot_spheres(x.as_slice(), model)
}

/// One field per support time.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfSequence {
    fields: Vec<Arc<Sdf>>,
}

impl SdfSequence {
    pub fn new(fields: Vec<Arc<Sdf>>) -> Result<Self> {
        if let Some(first) = fields.first() {
            if fields.iter().any(|f| !f.same_geometry(first)) {
                return Err(Error::Scenario("SDF sequence grids differ".into()));
            }
        }
        Ok(Self { fields })
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn get(&self, k: usize) -> Option<&Arc<Sdf>> {
        self.fields.get(k)
    }
}

/// How obstacle factors get their field.
#[derive(Clone, Debug)]
pub enum FieldSource {
    /// The single field of the latest obstacle observation, for every step.
    Reactive(Arc<Sdf>),
    /// A precomputed field per support time.
    Predictive(Arc<SdfSequence>),
}

pub fn sdf_for_step(mode: &FieldSource, k: usize, horizon: usize) -> Result<Arc<Sdf>> {
    if k > horizon {
        return Err(Error::StepOutOfRange { index: k, horizon });
    }
    match mode {
        FieldSource::Reactive(field) => Ok(field.clone()),
        FieldSource::Predictive(seq) => seq
            .get(k)
            .cloned()
            .ok_or(Error::StepOutOfRange { index: k, horizon }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arena() -> Workspace {
        Workspace {
            min: [0.0, 0.0],
            max: [4.0, 4.0],
        }
    }

    #[test]
    fn circle_center_and_ring() {
        let c = Circle {
            center: [2.0, 2.0],
            radius: 0.3,
        };
        let f = build_sdf(&[c], &arena(), 0.02, false);
        let (d, _) = f.query([2.0, 2.0]);
        assert!((d + 0.3).abs() < 1e-12);
        let (d, _) = f.query([3.0, 2.0]);
        assert!((d - 0.7).abs() < 1e-12);
    }

    #[test]
    fn empty_field_is_positive_sentinel() {
        let f = build_sdf(&[], &arena(), 0.1, false);
        let sentinel = 10.0 * arena().diagonal();
        assert!(f.data().iter().all(|&v| v == sentinel));
        let (d, g) = f.query([1.3, 2.7]);
        assert_eq!(d, sentinel);
        assert_eq!(g, [0.0, 0.0]);
        assert_eq!(hinge_cost(d, 0.4).0, 0.0);
    }

    #[test]
    fn midpoint_interpolates() {
        let ws = Workspace {
            min: [0.0, 0.0],
            max: [1.0, 1.0],
        };
        let mut f = build_sdf(&[], &ws, 1.0, false);
        f.data = vec![0.2, 0.4, 0.2, 0.4];
        assert!((f.query([0.5, 0.0]).0 - 0.3).abs() < 1e-15);
        assert_eq!(f.query([1.0, 1.0]).0, 0.4);
    }

    #[test]
    fn outside_grid_adds_distance() {
        let f = build_sdf(&[], &arena(), 0.5, false);
        let inside = f.query([4.0, 2.0]).0;
        let (d, g) = f.query([5.0, 2.0]);
        assert!((d - inside - 1.0).abs() < 1e-12);
        assert_eq!(g[0], 1.0);
    }

    #[test]
    fn hinge_branches() {
        assert_eq!(hinge_cost(0.4, 0.4), (0.0, -0.5));
        assert_eq!(hinge_cost(0.0, 0.4), (0.4, -1.0));
        assert_eq!(hinge_cost(0.8, 0.4), (0.0, 0.0));
    }

    #[test]
    fn sphere_placement() {
        let mut x = [0.0; 6];
        x[0] = 1.0;
        x[2] = 2.0;
        x[4] = std::f64::consts::FRAC_PI_2;
        let m = SphereModel {
            spheres: vec![
                Sphere {
                    offset: [0.0, 0.0],
                    radius: 0.1,
                },
                Sphere {
                    offset: [1.0, 0.0],
                    radius: 0.1,
                },
            ],
        };
        let s = robot_spheres(&x, &m);
        assert_eq!(s[0].center, [1.0, 2.0]);
        assert!((s[1].center[0] - 1.0).abs() < 1e-15 && (s[1].center[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn step_selection() {
        let ws = arena();
        let a = Arc::new(build_sdf(&[], &ws, 0.5, false));
        let reactive = FieldSource::Reactive(a.clone());
        assert!(Arc::ptr_eq(&sdf_for_step(&reactive, 3, 5).unwrap(), &a));
        assert!(sdf_for_step(&reactive, 6, 5).is_err());

        let fields: Vec<Arc<Sdf>> = (0..3)
            .map(|k| {
                let c = Circle {
                    center: [1.0 + k as f64, 1.0],
                    radius: 0.2,
                };
                Arc::new(build_sdf(&[c], &ws, 0.5, false))
            })
            .collect();
        let seq = Arc::new(SdfSequence::new(fields.clone()).unwrap());
        let pred = FieldSource::Predictive(seq);
        assert!(Arc::ptr_eq(&sdf_for_step(&pred, 0, 2).unwrap(), &fields[0]));
        assert!(Arc::ptr_eq(&sdf_for_step(&pred, 2, 2).unwrap(), &fields[2]));
    }

    #[test]
    fn csv_dump_header() {
        let f = build_sdf(&[], &arena(), 2.0, false);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[1], "0,0,2,3,3");
        assert_eq!(lines.len(), 2 + 3);
    }
}

//! Grid containers, interpolation and file I/O shared by every stage.
//!
//! Velocities live on a staggered (MAC) grid: `u` on vertical faces,
//! `v` on horizontal faces, everything else at cell centers. All sampling
//! is bilinear and clamps the query point to the domain first, so
//! `sample(p) == sample(clamp(p))` for every `p`.

mod grid;
pub mod image;
mod lattice;
pub mod raster;
mod vec2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grid::GridSpec;
pub(crate) use lattice::Lattice;
pub use vec2::Vec2;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },
    #[error("{what}: expected {expected} samples, found {found}")]
    Length { what: &'static str, expected: usize, found: usize },
    #[error("non-finite sample in {0}")]
    NonFinite(&'static str),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<(), FieldError> {
    if expected == found {
        Ok(())
    } else {
        Err(FieldError::Length { what, expected, found })
    }
}

fn check_finite(what: &'static str, v: &[f64]) -> Result<(), FieldError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(FieldError::NonFinite(what))
    }
}

/// Cell-centered scalar samples (density, pressure, FTLE, temperature).
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(spec: GridSpec, fill: f64) -> Self {
        ScalarField { spec, values: vec![fill; spec.cells()] }
    }

    pub fn from_values(spec: GridSpec, values: Vec<f64>) -> Result<Self, FieldError> {
        check_len("scalar field", spec.cells(), values.len())?;
        check_finite("scalar field", &values)?;
        Ok(ScalarField { spec, values })
    }

    /// Builds a field by evaluating `f` at every cell center.
    pub fn from_fn(spec: GridSpec, f: impl Fn(Vec2) -> f64) -> Self {
        let mut values = Vec::with_capacity(spec.cells());
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                values.push(f(spec.cell_center(i, j)));
            }
        }
        ScalarField { spec, values }
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.spec.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.spec.idx(i, j);
        self.values[k] = v;
    }

    pub(crate) fn lattice(&self) -> Lattice<'_> {
        Lattice {
            data: &self.values,
            w: self.spec.nx,
            h: self.spec.ny,
            ox: 0.5,
            oy: 0.5,
            dx: self.spec.dx,
            extent: Vec2::new(self.spec.width(), self.spec.height()),
        }
    }

    /// Clamped bilinear sample at a world-space point.
    pub fn sample(&self, pos: Vec2) -> f64 {
        self.lattice().sample(pos)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Staggered velocity: `u` has `(nx+1)*ny` samples on vertical faces, `v`
/// has `nx*(ny+1)` samples on horizontal faces, both row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityField {
    spec: GridSpec,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl VelocityField {
    pub fn zeros(spec: GridSpec) -> Self {
        VelocityField { spec, u: vec![0.0; (spec.nx + 1) * spec.ny], v: vec![0.0; spec.nx * (spec.ny + 1)] }
    }

    pub fn uniform(spec: GridSpec, vel: Vec2) -> Self {
        VelocityField { spec, u: vec![vel.x; (spec.nx + 1) * spec.ny], v: vec![vel.y; spec.nx * (spec.ny + 1)] }
    }

    pub fn from_components(spec: GridSpec, u: Vec<f64>, v: Vec<f64>) -> Result<Self, FieldError> {
        check_len("u faces", (spec.nx + 1) * spec.ny, u.len())?;
        check_len("v faces", spec.nx * (spec.ny + 1), v.len())?;
        check_finite("u faces", &u)?;
        check_finite("v faces", &v)?;
        Ok(VelocityField { spec, u, v })
    }

    /// Evaluates an analytic velocity function at each face center and keeps
    /// the matching component.
    pub fn from_fn(spec: GridSpec, f: impl Fn(Vec2) -> Vec2) -> Self {
        let mut field = Self::zeros(spec);
        let dx = spec.dx;
        for j in 0..spec.ny {
            for i in 0..=spec.nx {
                let p = Vec2::new(i as f64 * dx, (j as f64 + 0.5) * dx);
                field.u[j * (spec.nx + 1) + i] = f(p).x;
            }
        }
        for j in 0..=spec.ny {
            for i in 0..spec.nx {
                let p = Vec2::new((i as f64 + 0.5) * dx, j as f64 * dx);
                field.v[j * spec.nx + i] = f(p).y;
            }
        }
        field
    }

    /// Builds faces from cell-centered components: interior faces average
    /// their two neighbours, domain-boundary faces copy the adjacent cell.
    pub fn from_centered(spec: GridSpec, cu: &[f64], cv: &[f64]) -> Result<Self, FieldError> {
        check_len("centered u", spec.cells(), cu.len())?;
        check_len("centered v", spec.cells(), cv.len())?;
        let (nx, ny) = (spec.nx, spec.ny);
        let mut field = Self::zeros(spec);
        for j in 0..ny {
            for i in 0..=nx {
                let l = cu[j * nx + i.saturating_sub(1).min(nx - 1)];
                let r = cu[j * nx + i.min(nx - 1)];
                field.u[j * (nx + 1) + i] = if i == 0 {
                    r
                } else if i == nx {
                    l
                } else {
                    0.5 * (l + r)
                };
            }
        }
        for j in 0..=ny {
            for i in 0..nx {
                let b = cv[j.saturating_sub(1).min(ny - 1) * nx + i];
                let t = cv[j.min(ny - 1) * nx + i];
                field.v[j * nx + i] = if j == 0 { t } else if j == ny { b } else { 0.5 * (b + t) };
            }
        }
        check_finite("velocity", &field.u)?;
        check_finite("velocity", &field.v)?;
        Ok(field)
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn u_mut(&mut self) -> &mut [f64] {
        &mut self.u
    }

    pub fn v_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    #[inline]
    pub fn u_idx(&self, i: usize, j: usize) -> usize {
        j * (self.spec.nx + 1) + i
    }

    #[inline]
    pub fn v_idx(&self, i: usize, j: usize) -> usize {
        j * self.spec.nx + i
    }

    pub(crate) fn u_lattice(&self) -> Lattice<'_> {
        Lattice {
            data: &self.u,
            w: self.spec.nx + 1,
            h: self.spec.ny,
            ox: 0.0,
            oy: 0.5,
            dx: self.spec.dx,
            extent: Vec2::new(self.spec.width(), self.spec.height()),
        }
    }

    pub(crate) fn v_lattice(&self) -> Lattice<'_> {
        Lattice {
            data: &self.v,
            w: self.spec.nx,
            h: self.spec.ny + 1,
            ox: 0.5,
            oy: 0.0,
            dx: self.spec.dx,
            extent: Vec2::new(self.spec.width(), self.spec.height()),
        }
    }

    /// Clamped bilinear sample of each staggered component.
    #[inline]
    pub fn sample(&self, pos: Vec2) -> Vec2 {
        Vec2::new(self.u_lattice().sample(pos), self.v_lattice().sample(pos))
    }

    /// Velocity at cell centers (average of the two opposing faces).
    pub fn centered(&self) -> (Vec<f64>, Vec<f64>) {
        let (nx, ny) = (self.spec.nx, self.spec.ny);
        let mut cu = Vec::with_capacity(nx * ny);
        let mut cv = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                cu.push(0.5 * (self.u[self.u_idx(i, j)] + self.u[self.u_idx(i + 1, j)]));
                cv.push(0.5 * (self.v[self.v_idx(i, j)] + self.v[self.v_idx(i, j + 1)]));
            }
        }
        (cu, cv)
    }

    /// Centered velocity at cell `(i, j)`.
    #[inline]
    pub fn center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            0.5 * (self.u[self.u_idx(i, j)] + self.u[self.u_idx(i + 1, j)]),
            0.5 * (self.v[self.v_idx(i, j)] + self.v[self.v_idx(i, j + 1)]),
        )
    }

    /// Discrete MAC divergence per cell.
    pub fn divergence(&self) -> ScalarField {
        let spec = self.spec;
        let inv = 1.0 / spec.dx;
        let mut out = ScalarField::new(spec, 0.0);
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                let d = (self.u[self.u_idx(i + 1, j)] - self.u[self.u_idx(i, j)] + self.v[self.v_idx(i, j + 1)]
                    - self.v[self.v_idx(i, j)])
                    * inv;
                out.set(i, j, d);
            }
        }
        out
    }

    /// Largest absolute face component.
    pub fn max_abs(&self) -> f64 {
        self.u.iter().chain(self.v.iter()).fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Largest cell-centered speed.
    pub fn max_speed(&self) -> f64 {
        let (cu, cv) = self.centered();
        cu.iter().zip(&cv).fold(0.0f64, |m, (a, b)| m.max(a.hypot(*b)))
    }

    /// Sum over faces of `0.5 * component^2 * dx^2`.
    pub fn kinetic_energy(&self) -> f64 {
        let area = self.spec.dx * self.spec.dx;
        0.5 * area * self.u.iter().chain(self.v.iter()).map(|x| x * x).sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }

    /// Component-wise `self + other * s`.
    pub fn add_scaled(&mut self, other: &VelocityField, s: f64) -> Result<(), FieldError> {
        self.spec.check_same(&other.spec)?;
        self.u.iter_mut().zip(&other.u).for_each(|(a, b)| *a += b * s);
        self.v.iter_mut().zip(&other.v).for_each(|(a, b)| *a += b * s);
        Ok(())
    }

    pub fn negated(&self) -> VelocityField {
        VelocityField {
            spec: self.spec,
            u: self.u.iter().map(|x| -x).collect(),
            v: self.v.iter().map(|x| -x).collect(),
        }
    }
}

/// Per-cell boolean occupancy (LCS region, obstacles, sources).
#[derive(Clone, Debug, PartialEq)]
pub struct MaskField {
    spec: GridSpec,
    cells: Vec<bool>,
}

impl MaskField {
    pub fn empty(spec: GridSpec) -> Self {
        MaskField { spec, cells: vec![false; spec.cells()] }
    }

    pub fn from_cells(spec: GridSpec, cells: Vec<bool>) -> Result<Self, FieldError> {
        check_len("mask", spec.cells(), cells.len())?;
        Ok(MaskField { spec, cells })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut cells = Vec::with_capacity(spec.cells());
        for j in 0..spec.ny {
            for i in 0..spec.nx {
                cells.push(f(i, j));
            }
        }
        MaskField { spec, cells }
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[self.spec.idx(i, j)]
    }

    /// Like `get`, but out-of-range coordinates read as `false`.
    #[inline]
    pub fn get_signed(&self, i: isize, j: isize) -> bool {
        i >= 0
            && j >= 0
            && (i as usize) < self.spec.nx
            && (j as usize) < self.spec.ny
            && self.cells[self.spec.idx(i as usize, j as usize)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        let k = self.spec.idx(i, j);
        self.cells[k] = on;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.cells.iter().any(|c| *c)
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.cells.len() as f64
    }

    /// True when every set cell of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &MaskField) -> bool {
        self.cells.iter().zip(&other.cells).all(|(a, b)| !*a || *b)
    }

    pub fn union_with(&mut self, other: &MaskField) {
        self.cells.iter_mut().zip(&other.cells).for_each(|(a, b)| *a |= *b);
    }
}

/// Cell-centered 2D vector field, used for external forces.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    spec: GridSpec,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl VectorField {
    pub fn zeros(spec: GridSpec) -> Self {
        VectorField { spec, x: vec![0.0; spec.cells()], y: vec![0.0; spec.cells()] }
    }

    pub fn uniform(spec: GridSpec, f: Vec2) -> Self {
        VectorField { spec, x: vec![f.x; spec.cells()], y: vec![f.y; spec.cells()] }
    }

    pub fn from_components(spec: GridSpec, x: Vec<f64>, y: Vec<f64>) -> Result<Self, FieldError> {
        check_len("vector x", spec.cells(), x.len())?;
        check_len("vector y", spec.cells(), y.len())?;
        Ok(VectorField { spec, x, y })
    }

    #[inline]
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Vec2 {
        let k = self.spec.idx(i, j);
        Vec2::new(self.x[k], self.y[k])
    }

    pub fn is_zero(&self) -> bool {
        self.x.iter().chain(self.y.iter()).all(|v| *v == 0.0)
    }
}

/// Flow-map Jacobian `dPhi/dx` as `[[a, b], [c, d]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jacobian2x2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Jacobian2x2 {
    pub const IDENTITY: Jacobian2x2 = Jacobian2x2 { a: 1.0, b: 0.0, c: 0.0, d: 1.0 };

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn transpose(&self) -> Jacobian2x2 {
        Jacobian2x2 { a: self.a, b: self.c, c: self.b, d: self.d }
    }

    pub fn mul(&self, o: &Jacobian2x2) -> Jacobian2x2 {
        Jacobian2x2 {
            a: self.a * o.a + self.b * o.c,
            b: self.a * o.b + self.b * o.d,
            c: self.c * o.a + self.d * o.c,
            d: self.c * o.b + self.d * o.d,
        }
    }

    /// Cauchy-Green tensor `M^T M`.
    pub fn cauchy_green(&self) -> Jacobian2x2 {
        self.transpose().mul(self)
    }

    /// Largest eigenvalue of a symmetric 2x2 matrix (only `a`, `b`, `d` are read).
    pub fn max_eigenvalue_symmetric(&self) -> f64 {
        let half_trace = 0.5 * (self.a + self.d);
        let half_diff = 0.5 * (self.a - self.d);
        half_trace + half_diff.hypot(self.b)
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite() && self.c.is_finite() && self.d.is_finite()
    }
}

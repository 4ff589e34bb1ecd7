//! Incompressible smoke solver on a MAC grid.
//!
//! One [`step`] runs: add sources, apply forces, project, self-advect the
//! velocity, project again, advect density. Left, right and bottom walls are
//! free-slip; the top is an open outflow unless [`TopBoundary::Closed`] is
//! selected.

mod advect;
mod pressure;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, GridSpec, MaskField, ScalarField, Vec2, VectorField, VelocityField};

pub use advect::{
    advect_maccormack, advect_maccormack_with_bounds, advect_scalar, advect_semi_lagrangian, advect_velocity,
    backtrace, AdvectionScheme,
};
pub use pressure::{ProjectReport, TopBoundary};

/// Buoyancy acts straight up.
pub const BUOYANCY_DIR: Vec2 = Vec2::new(0.0, 1.0);

/// Source cells are filled toward this density and never pushed above it.
pub const SOURCE_SATURATION: f64 = 1.0;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid simulation parameters: {0}")]
    InvalidParams(String),
    #[error("invalid simulation state: {0}")]
    InvalidState(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub dt: f64,
    /// Buoyancy coefficient; the force is `alpha * density * BUOYANCY_DIR`.
    pub alpha: f64,
    pub rho: f64,
    /// Kinematic viscosity; 0 leaves diffusion to the advection scheme.
    pub nu: f64,
    pub pressure_tol: f64,
    pub pressure_max_iter: usize,
    /// Density emitted per second in each source cell.
    pub source_rate: f64,
    pub advection: AdvectionScheme,
    pub top: TopBoundary,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            dt: 0.1,
            alpha: 0.025,
            rho: 1.0,
            nu: 0.0,
            pressure_tol: 1e-5,
            pressure_max_iter: 2000,
            source_rate: 1.0,
            advection: AdvectionScheme::MacCormack,
            top: TopBoundary::Open,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: &str| Err(SolverError::InvalidParams(m.to_string()));
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return bad("alpha must be non-negative");
        }
        if !(self.pressure_tol > 0.0 && self.pressure_tol < 1.0) {
            return bad("pressure_tol must lie in (0, 1)");
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return bad("rho must be positive");
        }
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return bad("nu must be non-negative");
        }
        if !(self.source_rate.is_finite() && self.source_rate >= 0.0) {
            return bad("source_rate must be non-negative");
        }
        if self.pressure_max_iter == 0 {
            return bad("pressure_max_iter must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub vel: VelocityField,
    pub density: ScalarField,
    pub obstacles: MaskField,
    pub sources: MaskField,
    /// Last pressure solution, reused as the next warm start.
    pub pressure: ScalarField,
    pub time: f64,
    pub frame: u64,
}

impl SimState {
    pub fn new(spec: GridSpec) -> Self {
        SimState {
            vel: VelocityField::zeros(spec),
            density: ScalarField::new(spec, 0.0),
            obstacles: MaskField::empty(spec),
            sources: MaskField::empty(spec),
            pressure: ScalarField::new(spec, 0.0),
            time: 0.0,
            frame: 0,
        }
    }

    pub fn spec(&self) -> &GridSpec {
        self.vel.spec()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let s = self.spec();
        for (name, other) in [
            ("density", self.density.spec()),
            ("obstacles", self.obstacles.spec()),
            ("sources", self.sources.spec()),
            ("pressure", self.pressure.spec()),
        ] {
            if !s.same_dims(other) {
                return Err(SolverError::InvalidState(format!("{name} grid does not match velocity grid")));
            }
        }
        if self.obstacles.count() == s.cells() {
            return Err(SolverError::InvalidState("no fluid cells".into()));
        }
        Ok(())
    }

    /// Clears velocity, density, pressure and the clock; keeps obstacles and sources.
    pub fn reset(&mut self) {
        let spec = *self.spec();
        self.vel = VelocityField::zeros(spec);
        self.density = ScalarField::new(spec, 0.0);
        self.pressure = ScalarField::new(spec, 0.0);
        self.time = 0.0;
        self.frame = 0;
    }

    /// Density-weighted mean height, or `None` without density.
    pub fn density_centroid_y(&self) -> Option<f64> {
        let s = *self.spec();
        let mut mass = 0.0;
        let mut moment = 0.0;
        for j in 0..s.ny {
            for i in 0..s.nx {
                let d = self.density.get(i, j);
                mass += d;
                moment += d * s.cell_center(i, j).y;
            }
        }
        (mass > 0.0).then(|| moment / mass)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub force_projection: ProjectReport,
    pub advection_projection: ProjectReport,
}

impl StepReport {
    pub fn converged(&self) -> bool {
        self.force_projection.converged && self.advection_projection.converged
    }
}

/// Fills source cells at `source_rate`, saturating at [`SOURCE_SATURATION`].
pub fn add_sources(state: &mut SimState, params: &SimParams) {
    let add = params.source_rate * params.dt;
    let sources = state.sources.cells().to_vec();
    for (d, on) in state.density.values_mut().iter_mut().zip(sources) {
        if on && *d < SOURCE_SATURATION {
            *d = (*d + add).min(SOURCE_SATURATION);
        }
    }
}

/// `vel += dt * (alpha * density * z + extra_force)`, with cell quantities
/// averaged onto faces.
pub fn apply_forces(state: &mut SimState, params: &SimParams, extra_force: &VectorField) -> Result<(), SolverError> {
    let spec = *state.spec();
    if !spec.same_dims(extra_force.spec()) {
        return Err(FieldError::DimensionMismatch {
            expected: (spec.nx, spec.ny),
            found: (extra_force.spec().nx, extra_force.spec().ny),
        }
        .into());
    }
    let (nx, ny) = (spec.nx, spec.ny);
    let dt = params.dt;
    let ax = params.alpha * BUOYANCY_DIR.x;
    let ay = params.alpha * BUOYANCY_DIR.y;
    let dens = state.density.values();
    let avg = |a: f64, b: f64| 0.5 * (a + b);

    let mut du = vec![0.0; (nx + 1) * ny];
    for j in 0..ny {
        for i in 0..=nx {
            let l = j * nx + i.saturating_sub(1);
            let r = j * nx + i.min(nx - 1);
            let (rho, f) = match i {
                0 => (dens[r], extra_force.x[r]),
                _ if i == nx => (dens[l], extra_force.x[l]),
                _ => (avg(dens[l], dens[r]), avg(extra_force.x[l], extra_force.x[r])),
            };
            du[j * (nx + 1) + i] = dt * (ax * rho + f);
        }
    }
    let mut dv = vec![0.0; nx * (ny + 1)];
    for j in 0..=ny {
        for i in 0..nx {
            let b = j.saturating_sub(1) * nx + i;
            let t = j.min(ny - 1) * nx + i;
            let (rho, f) = match j {
                0 => (dens[t], extra_force.y[t]),
                _ if j == ny => (dens[b], extra_force.y[b]),
                _ => (avg(dens[b], dens[t]), avg(extra_force.y[b], extra_force.y[t])),
            };
            dv[j * nx + i] = dt * (ay * rho + f);
        }
    }
    state.vel.u_mut().iter_mut().zip(&du).for_each(|(u, d)| *u += d);
    state.vel.v_mut().iter_mut().zip(&dv).for_each(|(v, d)| *v += d);
    Ok(())
}

/// Explicit velocity diffusion, sub-stepped to stay within the 5-point
/// stability limit.
fn diffuse_velocity(vel: &mut VelocityField, nu: f64, dt: f64) {
    let dx = vel.spec().dx;
    let limit = 0.2 * dx * dx;
    let substeps = ((nu * dt) / limit).ceil().max(1.0) as usize;
    let k = nu * dt / substeps as f64 / (dx * dx);
    let (nx, ny) = (vel.spec().nx, vel.spec().ny);
    let smooth = |data: &mut [f64], w: usize, h: usize| {
        for _ in 0..substeps {
            let src = data.to_vec();
            for j in 0..h {
                for i in 0..w {
                    let c = src[j * w + i];
                    let l = src[j * w + i.saturating_sub(1)];
                    let r = src[j * w + (i + 1).min(w - 1)];
                    let b = src[j.saturating_sub(1) * w + i];
                    let t = src[(j + 1).min(h - 1) * w + i];
                    data[j * w + i] = c + k * (l + r + b + t - 4.0 * c);
                }
            }
        }
    };
    smooth(vel.u_mut(), nx + 1, ny);
    smooth(vel.v_mut(), nx, ny + 1);
}

/// Pressure projection: divergence-free fluid cells, zero normal velocity on
/// obstacle and wall faces. Non-convergence is reported, not raised.
pub fn project(state: &mut SimState, params: &SimParams) -> Result<ProjectReport, SolverError> {
    params.validate()?;
    state.validate()?;
    Ok(pressure::project_velocity(
        &mut state.vel,
        &mut state.pressure,
        &state.obstacles,
        params.top,
        params.dt,
        params.rho,
        params.pressure_tol,
        params.pressure_max_iter,
    ))
}

/// Advances the state by one `dt`.
pub fn step(state: &mut SimState, params: &SimParams, extra_force: &VectorField) -> Result<StepReport, SolverError> {
    params.validate()?;
    state.validate()?;
    add_sources(state, params);
    apply_forces(state, params, extra_force)?;
    if params.nu > 0.0 {
        diffuse_velocity(&mut state.vel, params.nu, params.dt);
    }
    let force_projection = project(state, params)?;
    state.vel = advect_velocity(&state.vel, params.dt, params.advection);
    let advection_projection = project(state, params)?;

    let advected = advect_scalar(&state.density, &state.vel, params.dt, params.advection);
    debug_assert!(
        params.advection != AdvectionScheme::SemiLagrangian
            || (advected.max() <= state.density.max() + 1e-12 && advected.min() >= state.density.min() - 1e-12)
    );
    state.density = advected;
    let obstacles = state.obstacles.cells().to_vec();
    for (d, solid) in state.density.values_mut().iter_mut().zip(obstacles) {
        if solid || *d < 0.0 {
            *d = 0.0;
        }
    }
    state.time += params.dt;
    state.frame += 1;
    Ok(StepReport { force_projection, advection_projection })
}

//! Sketch-guided simulation.
//!
//! Inside the guide region Ω the simulation is pulled toward the guide
//! velocity by `F = c (u_G - u_S) / dt`, evaluated at cell centers and
//! averaged onto faces together with buoyancy.
//!
//! [`guiding_force`] is the explicit force. For gains above two an explicit
//! force overshoots the target by more than it corrects, so
//! [`guided_step`] evaluates `u_S` at the end of the step instead: solving
//! `u' = u + dt F(u')` gives the same formula with `c` replaced by
//! `c / (1 + c)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, MaskField, Vec2, VectorField, VelocityField};
use crate::guide::{rasterize_obstacles, GuideFields, SketchDoc, StrokeKind};
use crate::solver::{self, SimParams, SimState, SolverError, StepReport};

#[derive(Debug, Error)]
pub enum GuidedError {
    #[error("invalid guided parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidedParams {
    pub c: f64,
    pub base: SimParams,
}

impl Default for GuidedParams {
    fn default() -> Self {
        GuidedParams { c: 1.0, base: SimParams::default() }
    }
}

impl GuidedParams {
    pub fn validate(&self) -> Result<(), GuidedError> {
        if !(self.c.is_finite() && self.c >= 0.0) {
            return Err(GuidedError::InvalidParams(format!("c must be finite and >= 0, got {}", self.c)));
        }
        self.base.validate()?;
        Ok(())
    }
}

fn check_dims(a: &crate::GridSpec, b: &crate::GridSpec) -> Result<(), FieldError> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(FieldError::DimensionMismatch { expected: (a.nx, a.ny), found: (b.nx, b.ny) })
    }
}

/// `c (u_g - u_s) / dt` at cell centers inside `omega`, zero elsewhere.
pub fn guiding_force(
    u_g: &VelocityField,
    u_s: &VelocityField,
    omega: &MaskField,
    c: f64,
    dt: f64,
) -> Result<VectorField, GuidedError> {
    let s = *u_g.spec();
    check_dims(&s, u_s.spec())?;
    check_dims(&s, omega.spec())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(GuidedError::InvalidParams(format!("dt must be positive, got {dt}")));
    }
    let mut f = VectorField::zeros(s);
    for j in 0..s.ny {
        for i in 0..s.nx {
            if !omega.get(i, j) {
                continue;
            }
            let (g, u) = (u_g.center(i, j), u_s.center(i, j));
            let k = s.idx(i, j);
            f.x[k] = c * ((g.x - u.x) / dt);
            f.y[k] = c * ((g.y - u.y) / dt);
        }
    }
    Ok(f)
}

/// Radius in cells of the smoke source placed at the foot of each smoke stroke.
pub const SOURCE_RADIUS: f64 = 3.0;

/// A disk of [`SOURCE_RADIUS`] around the lower endpoint of every smoke stroke.
pub fn stroke_sources(doc: &SketchDoc) -> MaskField {
    let s = doc.canvas;
    let feet: Vec<Vec2> = doc
        .strokes
        .iter()
        .filter(|st| st.kind == StrokeKind::Smoke && st.points.len() >= 2)
        .map(|st| {
            let (a, b) = (st.points[0], st.points[st.points.len() - 1]);
            s.clamp(Vec2::from(if b[1] < a[1] { b } else { a }))
        })
        .collect();
    let r = SOURCE_RADIUS * s.dx;
    MaskField::from_fn(s, |i, j| {
        let p = s.cell_center(i, j);
        feet.iter().any(|f| (p - *f).norm() <= r)
    })
}

/// Installs the obstacles and sources of `doc` into `state`.
pub fn apply_sketch(state: &mut SimState, doc: &SketchDoc) -> Result<(), GuidedError> {
    check_dims(state.spec(), &doc.canvas)?;
    state.obstacles = rasterize_obstacles(doc);
    state.sources = stroke_sources(doc);
    Ok(())
}

/// Gain applied by [`guided_step`] for a user scale `c`.
pub fn effective_gain(c: f64) -> f64 {
    c / (1.0 + c)
}

/// One solver step with buoyancy plus the guiding force.
pub fn guided_step(state: &mut SimState, guide: &GuideFields, params: &GuidedParams) -> Result<StepReport, GuidedError> {
    params.validate()?;
    guide.validate(state.spec())?;
    let force = guiding_force(&guide.u_g, &state.vel, &guide.omega, effective_gain(params.c), params.base.dt)?;
    Ok(solver::step(state, &params.base, &force)?)
}

/// Mean of `|u_s - u_g|` over Ω at cell centers; `None` for an empty Ω.
pub fn tracking_error(u_s: &VelocityField, guide: &GuideFields) -> Option<f64> {
    mean_over(&guide.omega, |i, j| (u_s.center(i, j) - guide.u_g.center(i, j)).norm())
}

/// Mean of `|u_g|` over Ω; `None` for an empty Ω.
pub fn mean_guide_speed(guide: &GuideFields) -> Option<f64> {
    mean_over(&guide.omega, |i, j| guide.u_g.center(i, j).norm())
}

fn mean_over(mask: &MaskField, f: impl Fn(usize, usize) -> f64) -> Option<f64> {
    let s = *mask.spec();
    let (mut sum, mut n) = (0.0, 0usize);
    for j in 0..s.ny {
        for i in 0..s.nx {
            if mask.get(i, j) {
                sum += f(i, j);
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

//! Flow maps and finite-time Lyapunov exponents over stored velocity frames.
//!
//! Particles are advanced with classic RK4 through a velocity that is
//! bilinear in space and linear in time between frames; positions are
//! clamped to the domain after every substep. A negative integration time
//! traces backward (equivalently: frames in reverse order with negated
//! velocities).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, GridSpec, Jacobian2x2, ScalarField, Vec2, VelocityField};

/// Floor applied to the largest Cauchy-Green eigenvalue before the log.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FtleError {
    #[error("invalid velocity sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid FTLE parameters: {0}")]
    InvalidParams(String),
    #[error("interval [{from}, {to}] lies outside the sequence span [0, {span}]")]
    Interval { from: f64, to: f64, span: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Velocity frames sampled every `dt_frame` seconds; frame `k` is at `t = k * dt_frame`.
#[derive(Clone, Debug)]
pub struct VelocitySequence {
    frames: Vec<VelocityField>,
    dt_frame: f64,
}

impl VelocitySequence {
    pub fn new(frames: Vec<VelocityField>, dt_frame: f64) -> Result<Self, FtleError> {
        if frames.len() < 2 {
            return Err(FtleError::InvalidSequence(format!("need at least 2 frames, got {}", frames.len())));
        }
        if !(dt_frame.is_finite() && dt_frame > 0.0) {
            return Err(FtleError::InvalidSequence("dt_frame must be positive".into()));
        }
        let spec = *frames[0].spec();
        if frames.iter().any(|f| f.spec() != &spec) {
            return Err(FtleError::InvalidSequence("frames do not share one grid".into()));
        }
        Ok(VelocitySequence { frames, dt_frame })
    }

    /// Samples an analytic, time-dependent velocity at `n_frames` frame times.
    pub fn from_fn(spec: GridSpec, n_frames: usize, dt_frame: f64, f: impl Fn(Vec2, f64) -> Vec2) -> Result<Self, FtleError> {
        let frames = (0..n_frames)
            .map(|k| {
                let t = k as f64 * dt_frame;
                VelocityField::from_fn(spec, |p| f(p, t))
            })
            .collect();
        Self::new(frames, dt_frame)
    }

    pub fn spec(&self) -> &GridSpec {
        self.frames[0].spec()
    }

    pub fn frames(&self) -> &[VelocityField] {
        &self.frames
    }

    pub fn dt_frame(&self) -> f64 {
        self.dt_frame
    }

    pub fn span(&self) -> f64 {
        (self.frames.len() - 1) as f64 * self.dt_frame
    }

    /// Velocity at world point `p` and time `t`, linear in time between frames.
    #[inline]
    pub fn velocity_at(&self, p: Vec2, t: f64) -> Vec2 {
        let last = self.frames.len() - 2;
        let s = (t / self.dt_frame).max(0.0);
        let k = (s.floor() as usize).min(last);
        let w = (s - k as f64).clamp(0.0, 1.0);
        let a = self.frames[k].sample(p);
        if w == 0.0 {
            return a;
        }
        let b = self.frames[k + 1].sample(p);
        if w == 1.0 {
            return b;
        }
        a * (1.0 - w) + b * w
    }

    /// Frames in reverse order with negated velocities. Backward tracing from
    /// `t` in `self` matches forward tracing from `span - t` here.
    pub fn time_reversed(&self) -> VelocitySequence {
        VelocitySequence { frames: self.frames.iter().rev().map(VelocityField::negated).collect(), dt_frame: self.dt_frame }
    }

    fn check_interval(&self, t0: f64, t: f64) -> Result<(), FtleError> {
        let span = self.span();
        let eps = 1e-9 * span.max(1.0);
        let (a, b) = if t >= 0.0 { (t0, t0 + t) } else { (t0 + t, t0) };
        if a < -eps || b > span + eps || !a.is_finite() || !b.is_finite() {
            return Err(FtleError::Interval { from: t0, to: t0 + t, span });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FtleParams {
    /// Signed integration time; negative traces backward.
    #[serde(rename = "T")]
    pub t: f64,
    /// Finite-difference offset in grid units.
    pub tau: f64,
    /// Tracing step; `None` uses the frame interval.
    pub substep_dt: Option<f64>,
}

impl Default for FtleParams {
    /// Backward FTLE over 2.5 s with a 0.1-cell offset.
    fn default() -> Self {
        FtleParams { t: -2.5, tau: 0.1, substep_dt: None }
    }
}

impl FtleParams {
    pub fn validate(&self) -> Result<(), FtleError> {
        if !(self.t.is_finite() && self.t != 0.0) {
            return Err(FtleError::InvalidParams("|T| must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(FtleError::InvalidParams("tau must lie in (0, 1)".into()));
        }
        if let Some(h) = self.substep_dt {
            if !(h.is_finite() && h > 0.0) {
                return Err(FtleError::InvalidParams("substep_dt must be positive".into()));
            }
        }
        Ok(())
    }

    fn substep(&self, seq: &VelocitySequence) -> f64 {
        self.substep_dt.unwrap_or(seq.dt_frame)
    }
}

#[inline]
fn rk4_path(seq: &VelocitySequence, start: Vec2, t0: f64, t: f64, substep: f64) -> Vec2 {
    let spec = seq.spec();
    let n = (t.abs() / substep - 1e-9).ceil().max(1.0) as usize;
    let h = t / n as f64;
    let mut x = spec.clamp(start);
    for s in 0..n {
        let ts = t0 + s as f64 * h;
        let k1 = seq.velocity_at(x, ts);
        let k2 = seq.velocity_at(x + k1 * (0.5 * h), ts + 0.5 * h);
        let k3 = seq.velocity_at(x + k2 * (0.5 * h), ts + 0.5 * h);
        let k4 = seq.velocity_at(x + k3 * h, ts + h);
        x = spec.clamp(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0));
    }
    x
}

/// Flow map: position at `t0 + t` of the particle starting at `start` at `t0`.
pub fn trace_particle(seq: &VelocitySequence, start: Vec2, t0: f64, t: f64, substep: f64) -> Result<Vec2, FtleError> {
    seq.check_interval(t0, t)?;
    if !(substep.is_finite() && substep > 0.0) {
        return Err(FtleError::InvalidParams("substep must be positive".into()));
    }
    Ok(rk4_path(seq, start, t0, t, substep))
}

/// Central-difference flow-map Jacobian from four particles offset by
/// `tau` grid units left/right/down/up of `p`.
pub fn flow_map_jacobian(
    seq: &VelocitySequence,
    p: Vec2,
    t0: f64,
    t: f64,
    tau: f64,
    substep: f64,
) -> Result<Jacobian2x2, FtleError> {
    seq.check_interval(t0, t)?;
    if !(substep.is_finite() && substep > 0.0) {
        return Err(FtleError::InvalidParams("substep must be positive".into()));
    }
    Ok(jacobian_unchecked(seq, p, t0, t, tau * seq.spec().dx, substep))
}

#[inline]
fn jacobian_unchecked(seq: &VelocitySequence, p: Vec2, t0: f64, t: f64, offset: f64, substep: f64) -> Jacobian2x2 {
    let left = rk4_path(seq, p - Vec2::new(offset, 0.0), t0, t, substep);
    let right = rk4_path(seq, p + Vec2::new(offset, 0.0), t0, t, substep);
    let down = rk4_path(seq, p - Vec2::new(0.0, offset), t0, t, substep);
    let up = rk4_path(seq, p + Vec2::new(0.0, offset), t0, t, substep);
    let inv = 1.0 / (2.0 * offset);
    Jacobian2x2 {
        a: (right.x - left.x) * inv,
        b: (up.x - down.x) * inv,
        c: (right.y - left.y) * inv,
        d: (up.y - down.y) * inv,
    }
}

/// `ln(sqrt(lambda_max(M^T M))) / |T|`.
pub fn ftle_from_jacobian(m: &Jacobian2x2, t: f64) -> f64 {
    let lambda = m.cauchy_green().max_eigenvalue_symmetric().max(LAMBDA_FLOOR);
    0.5 * lambda.ln() / t.abs()
}

/// FTLE at every cell center, starting at time `t0`.
pub fn ftle_field(seq: &VelocitySequence, t0: f64, params: &FtleParams) -> Result<ScalarField, FtleError> {
    params.validate()?;
    seq.check_interval(t0, params.t)?;
    let spec = *seq.spec();
    let substep = params.substep(seq);
    let offset = params.tau * spec.dx;
    let values: Vec<f64> = (0..spec.cells())
        .into_par_iter()
        .map(|k| {
            let p = spec.cell_center(k % spec.nx, k / spec.nx);
            ftle_from_jacobian(&jacobian_unchecked(seq, p, t0, params.t, offset, substep), params.t)
        })
        .collect();
    Ok(ScalarField::from_values(spec, values)?)
}

/// Backward FTLE ending at the last frame, the configuration used for LCS extraction.
pub fn backward_ftle_from_end(seq: &VelocitySequence, params: &FtleParams) -> Result<ScalarField, FtleError> {
    let p = FtleParams { t: -params.t.abs(), ..*params };
    ftle_field(seq, seq.span(), &p)
}

use rayon::prelude::*;

use crate::field::{Lattice, ScalarField, Vec2, VelocityField};

/// Advection scheme for transported quantities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvectionScheme {
    SemiLagrangian,
    #[default]
    MacCormack,
}

/// RK2 (midpoint) backtrace of `p` through `vel` over `dt`.
#[inline]
pub fn backtrace(vel: &VelocityField, p: Vec2, dt: f64) -> Vec2 {
    let mid = p - vel.sample(p) * (0.5 * dt);
    p - vel.sample(mid) * dt
}

fn semi_lagrangian_lattice(src: &Lattice<'_>, vel: &VelocityField, dt: f64) -> Vec<f64> {
    let w = src.w;
    let mut out = vec![0.0; src.data.len()];
    out.par_chunks_mut(w).enumerate().for_each(|(j, row)| {
        for (i, o) in row.iter_mut().enumerate() {
            *o = src.sample(backtrace(vel, src.node_pos(i, j), dt));
        }
    });
    out
}

/// Returns the corrected samples plus the per-sample clamp interval
/// (stencil extrema of the forward backtrace).
fn maccormack_lattice(src: &Lattice<'_>, vel: &VelocityField, dt: f64) -> (Vec<f64>, Vec<(f64, f64)>) {
    let w = src.w;
    let n = src.data.len();
    let mut fwd = vec![0.0; n];
    let mut bounds = vec![(0.0, 0.0); n];
    fwd.par_chunks_mut(w).zip(bounds.par_chunks_mut(w)).enumerate().for_each(|(j, (row, brow))| {
        for i in 0..w {
            let (v, lo, hi) = src.sample_with_bounds(backtrace(vel, src.node_pos(i, j), dt));
            row[i] = v;
            brow[i] = (lo, hi);
        }
    });
    let fwd_lattice = Lattice { data: &fwd, ..*src };
    let back = semi_lagrangian_lattice(&fwd_lattice, vel, -dt);
    let out = (0..n)
        .into_par_iter()
        .map(|k| {
            let corrected = fwd[k] + 0.5 * (src.data[k] - back[k]);
            let (lo, hi) = bounds[k];
            corrected.clamp(lo, hi)
        })
        .collect();
    (out, bounds)
}

/// Semi-Lagrangian transport of a cell-centered field.
pub fn advect_semi_lagrangian(field: &ScalarField, vel: &VelocityField, dt: f64) -> ScalarField {
    let values = semi_lagrangian_lattice(&field.lattice(), vel, dt);
    ScalarField::from_values(*field.spec(), values).expect("advection preserves layout")
}

/// MacCormack transport, clamped to the semi-Lagrangian stencil extrema.
pub fn advect_maccormack(field: &ScalarField, vel: &VelocityField, dt: f64) -> ScalarField {
    advect_maccormack_with_bounds(field, vel, dt).0
}

/// MacCormack transport that also reports the clamp interval used for each
/// sample.
pub fn advect_maccormack_with_bounds(
    field: &ScalarField,
    vel: &VelocityField,
    dt: f64,
) -> (ScalarField, Vec<(f64, f64)>) {
    let (values, bounds) = maccormack_lattice(&field.lattice(), vel, dt);
    (ScalarField::from_values(*field.spec(), values).expect("advection preserves layout"), bounds)
}

pub fn advect_scalar(field: &ScalarField, vel: &VelocityField, dt: f64, scheme: AdvectionScheme) -> ScalarField {
    match scheme {
        AdvectionScheme::SemiLagrangian => advect_semi_lagrangian(field, vel, dt),
        AdvectionScheme::MacCormack => advect_maccormack(field, vel, dt),
    }
}

/// Self-advection of the staggered velocity, each component on its own lattice.
pub fn advect_velocity(vel: &VelocityField, dt: f64, scheme: AdvectionScheme) -> VelocityField {
    let run = |l: Lattice<'_>| match scheme {
        AdvectionScheme::SemiLagrangian => semi_lagrangian_lattice(&l, vel, dt),
        AdvectionScheme::MacCormack => maccormack_lattice(&l, vel, dt).0,
    };
    let u = run(vel.u_lattice());
    let v = run(vel.v_lattice());
    VelocityField::from_components(*vel.spec(), u, v).expect("advection preserves layout")
}

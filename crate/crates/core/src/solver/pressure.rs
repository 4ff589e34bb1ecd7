//! Pressure projection on the MAC grid.
//!
//! Unknowns live in fluid cells. A face is open when both adjacent cells are
//! fluid, or when it is the top domain face of a fluid cell and the top
//! boundary is open (Dirichlet `p = 0` outside). The system is solved with
//! MIC(0)-preconditioned conjugate gradients, warm-started from the previous
//! pressure.

use serde::{Deserialize, Serialize};

use crate::field::{MaskField, ScalarField, VelocityField};

/// Top-of-domain boundary; the other three sides are always solid free-slip walls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopBoundary {
    /// Zero-gradient outflow: smoke leaves through the top.
    #[default]
    Open,
    Closed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectReport {
    pub iterations: usize,
    /// Achieved `max |div u| / max(1, max |u|)` over fluid cells.
    pub residual: f64,
    pub converged: bool,
}

/// Per-face open/solid flags, recomputed from the obstacle mask.
pub(crate) struct FaceFlags {
    pub u_open: Vec<bool>,
    pub v_open: Vec<bool>,
}

pub(crate) fn face_flags(obstacles: &MaskField, top: TopBoundary) -> FaceFlags {
    let s = *obstacles.spec();
    let (nx, ny) = (s.nx, s.ny);
    let mut u_open = vec![false; (nx + 1) * ny];
    let mut v_open = vec![false; nx * (ny + 1)];
    for j in 0..ny {
        for i in 1..nx {
            u_open[j * (nx + 1) + i] = !obstacles.get(i - 1, j) && !obstacles.get(i, j);
        }
    }
    for j in 1..ny {
        for i in 0..nx {
            v_open[j * nx + i] = !obstacles.get(i, j - 1) && !obstacles.get(i, j);
        }
    }
    if top == TopBoundary::Open {
        for i in 0..nx {
            v_open[ny * nx + i] = !obstacles.get(i, ny - 1);
        }
    }
    FaceFlags { u_open, v_open }
}

/// Zeroes the normal velocity of every solid face.
pub(crate) fn enforce_solid_faces(vel: &mut VelocityField, flags: &FaceFlags) {
    vel.u_mut().iter_mut().zip(&flags.u_open).for_each(|(u, open)| {
        if !open {
            *u = 0.0
        }
    });
    vel.v_mut().iter_mut().zip(&flags.v_open).for_each(|(v, open)| {
        if !open {
            *v = 0.0
        }
    });
}

/// Five-point operator restricted to fluid cells.
struct Poisson {
    nx: usize,
    ny: usize,
    fluid: Vec<bool>,
    diag: Vec<f64>,
    /// coupling to (i+1, j), 0 or -1
    ax: Vec<f64>,
    /// coupling to (i, j+1), 0 or -1
    ay: Vec<f64>,
}

impl Poisson {
    fn new(obstacles: &MaskField, flags: &FaceFlags) -> Self {
        let s = *obstacles.spec();
        let (nx, ny) = (s.nx, s.ny);
        let n = nx * ny;
        let fluid: Vec<bool> = obstacles.cells().iter().map(|o| !o).collect();
        let mut diag = vec![0.0; n];
        let mut ax = vec![0.0; n];
        let mut ay = vec![0.0; n];
        for j in 0..ny {
            for i in 0..nx {
                let c = j * nx + i;
                if !fluid[c] {
                    continue;
                }
                let faces = [
                    flags.u_open[j * (nx + 1) + i],
                    flags.u_open[j * (nx + 1) + i + 1],
                    flags.v_open[j * nx + i],
                    flags.v_open[(j + 1) * nx + i],
                ];
                diag[c] = faces.iter().filter(|f| **f).count() as f64;
                if i + 1 < nx && faces[1] {
                    ax[c] = -1.0;
                }
                if j + 1 < ny && faces[3] {
                    ay[c] = -1.0;
                }
            }
        }
        Poisson { nx, ny, fluid, diag, ax, ay }
    }

    fn apply(&self, p: &[f64], out: &mut [f64]) {
        let nx = self.nx;
        for j in 0..self.ny {
            for i in 0..nx {
                let c = j * nx + i;
                if !self.fluid[c] {
                    out[c] = 0.0;
                    continue;
                }
                let mut v = self.diag[c] * p[c];
                if i + 1 < nx {
                    v += self.ax[c] * p[c + 1];
                }
                if i > 0 {
                    v += self.ax[c - 1] * p[c - 1];
                }
                if j + 1 < self.ny {
                    v += self.ay[c] * p[c + nx];
                }
                if j > 0 {
                    v += self.ay[c - nx] * p[c - nx];
                }
                out[c] = v;
            }
        }
    }

    fn mic0(&self) -> Vec<f64> {
        const TUNING: f64 = 0.97;
        const SAFETY: f64 = 0.25;
        let nx = self.nx;
        let mut precon = vec![0.0; self.diag.len()];
        for j in 0..self.ny {
            for i in 0..nx {
                let c = j * nx + i;
                if !self.fluid[c] || self.diag[c] == 0.0 {
                    continue;
                }
                let mut e = self.diag[c];
                if i > 0 {
                    let l = c - 1;
                    let t = self.ax[l] * precon[l];
                    e -= t * t + TUNING * self.ax[l] * self.ay[l] * precon[l] * precon[l];
                }
                if j > 0 {
                    let b = c - nx;
                    let t = self.ay[b] * precon[b];
                    e -= t * t + TUNING * self.ay[b] * self.ax[b] * precon[b] * precon[b];
                }
                if e < SAFETY * self.diag[c] {
                    e = self.diag[c];
                }
                precon[c] = 1.0 / e.sqrt();
            }
        }
        precon
    }

    fn precondition(&self, precon: &[f64], r: &[f64], q: &mut [f64], z: &mut [f64]) {
        let nx = self.nx;
        for j in 0..self.ny {
            for i in 0..nx {
                let c = j * nx + i;
                if precon[c] == 0.0 {
                    q[c] = 0.0;
                    continue;
                }
                let mut t = r[c];
                if i > 0 {
                    t -= self.ax[c - 1] * precon[c - 1] * q[c - 1];
                }
                if j > 0 {
                    t -= self.ay[c - nx] * precon[c - nx] * q[c - nx];
                }
                q[c] = t * precon[c];
            }
        }
        for j in (0..self.ny).rev() {
            for i in (0..nx).rev() {
                let c = j * nx + i;
                if precon[c] == 0.0 {
                    z[c] = 0.0;
                    continue;
                }
                let mut t = q[c];
                if i + 1 < nx {
                    t -= self.ax[c] * precon[c] * z[c + 1];
                }
                if j + 1 < self.ny {
                    t -= self.ay[c] * precon[c] * z[c + nx];
                }
                z[c] = t * precon[c];
            }
        }
    }

    /// Connected fluid regions with no Dirichlet face make the system
    /// singular; removing the mean of `b` there keeps it consistent.
    fn remove_nullspace(&self, flags: &FaceFlags, b: &mut [f64]) {
        let (nx, ny) = (self.nx, self.ny);
        let n = nx * ny;
        let mut label = vec![usize::MAX; n];
        let mut stack = Vec::new();
        let mut members = Vec::new();
        for start in 0..n {
            if !self.fluid[start] || label[start] != usize::MAX {
                continue;
            }
            members.clear();
            let mut grounded = false;
            label[start] = start;
            stack.push(start);
            while let Some(c) = stack.pop() {
                members.push(c);
                let (i, j) = (c % nx, c / nx);
                if j == ny - 1 && flags.v_open[ny * nx + i] {
                    grounded = true;
                }
                let mut visit = |nb: usize, open: bool| {
                    if open && label[nb] == usize::MAX {
                        label[nb] = start;
                        stack.push(nb);
                    }
                };
                if i > 0 {
                    visit(c - 1, flags.u_open[j * (nx + 1) + i]);
                }
                if i + 1 < nx {
                    visit(c + 1, flags.u_open[j * (nx + 1) + i + 1]);
                }
                if j > 0 {
                    visit(c - nx, flags.v_open[j * nx + i]);
                }
                if j + 1 < ny {
                    visit(c + nx, flags.v_open[(j + 1) * nx + i]);
                }
            }
            if !grounded {
                let mean = members.iter().map(|&c| b[c]).sum::<f64>() / members.len() as f64;
                members.iter().for_each(|&c| b[c] -= mean);
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Makes `vel` discretely divergence-free in fluid cells and zeroes every
/// solid face. `pressure` is the warm start and receives the solution.
pub(crate) fn project_velocity(
    vel: &mut VelocityField,
    pressure: &mut ScalarField,
    obstacles: &MaskField,
    top: TopBoundary,
    dt: f64,
    rho: f64,
    tol: f64,
    max_iter: usize,
) -> ProjectReport {
    let spec = *vel.spec();
    let (nx, ny, dx) = (spec.nx, spec.ny, spec.dx);
    let flags = face_flags(obstacles, top);
    enforce_solid_faces(vel, &flags);

    let op = Poisson::new(obstacles, &flags);
    // u_face -= scale * (p_hi - p_lo)
    let scale = dt / (rho * dx);
    let speed_ref = vel.max_abs().max(1.0);
    // div_new = -(scale / dx) * residual
    let target = tol * speed_ref * dx / scale;

    let div = vel.divergence();
    let mut b: Vec<f64> = div.values().iter().zip(&op.fluid).map(|(d, f)| if *f { -d * dx / scale } else { 0.0 }).collect();
    op.remove_nullspace(&flags, &mut b);

    let n = nx * ny;
    let p = pressure.values_mut();
    p.iter_mut().zip(&op.fluid).for_each(|(x, f)| {
        if !*f {
            *x = 0.0
        }
    });
    let mut ap = vec![0.0; n];
    op.apply(p, &mut ap);
    let mut r: Vec<f64> = b.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let precon = op.mic0();
    let mut q = vec![0.0; n];
    let mut z = vec![0.0; n];
    op.precondition(&precon, &r, &mut q, &mut z);
    let mut d = z.clone();
    let mut rz = dot(&r, &z);
    let mut iterations = 0;
    while iterations < max_iter && max_abs(&r) > target {
        op.apply(&d, &mut ap);
        let dq = dot(&d, &ap);
        if dq <= 0.0 || !dq.is_finite() {
            break;
        }
        let alpha = rz / dq;
        for k in 0..n {
            p[k] += alpha * d[k];
            r[k] -= alpha * ap[k];
        }
        op.precondition(&precon, &r, &mut q, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            d[k] = z[k] + beta * d[k];
        }
        iterations += 1;
    }

    let u_open = &flags.u_open;
    let v_open = &flags.v_open;
    for j in 0..ny {
        for i in 1..nx {
            let f = j * (nx + 1) + i;
            if u_open[f] {
                vel.u_mut()[f] -= scale * (p[j * nx + i] - p[j * nx + i - 1]);
            }
        }
    }
    for j in 1..=ny {
        for i in 0..nx {
            let f = j * nx + i;
            if !v_open[f] {
                continue;
            }
            let above = if j == ny { 0.0 } else { p[j * nx + i] };
            vel.v_mut()[f] -= scale * (above - p[(j - 1) * nx + i]);
        }
    }

    let div = vel.divergence();
    let achieved = div
        .values()
        .iter()
        .zip(&op.fluid)
        .filter(|(_, f)| **f)
        .fold(0.0f64, |m, (d, _)| m.max(d.abs()))
        / speed_ref;
    let converged = achieved <= tol;
    if !converged {
        log::warn!("pressure solve stopped after {iterations} iterations at residual {achieved:.3e} (tol {tol:.1e})");
    }
    ProjectReport { iterations, residual: achieved, converged }
}

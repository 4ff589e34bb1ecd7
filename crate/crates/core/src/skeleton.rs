//! Synthetic sketches: heat-equation skeletons of LCS masks.
//!
//! The mask contour is held at temperature 1, the exterior at 0 (and never
//! conducts), and the interior diffuses from 0. Far from the contour the
//! interior stays coldest, so the coldness ridge traces the medial axis.
//! The ridge pixels anchor a topology-preserving thinning that peels the
//! mask hottest-first; a directional pass then reduces the result to one
//! pixel width and spurs shorter than [`MIN_BRANCH`] are pruned.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{GridSpec, MaskField, ScalarField};

/// Branches shorter than this many pixels are removed.
pub const MIN_BRANCH: usize = 3;

/// Minimum curvature anisotropy for a ridge pixel.
const MIN_ANISOTROPY: f64 = 0.25;

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("mask is empty")]
    EmptyMask,
    #[error("invalid heat parameters: {0}")]
    InvalidParams(String),
    #[error("heat map and mask grids differ")]
    GridMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeatParams {
    /// Step cap; `None` means `4 * max(nx, ny)`.
    pub iterations: Option<usize>,
    pub conductivity: f64,
    pub converge_tol: f64,
}

impl Default for HeatParams {
    fn default() -> Self {
        HeatParams { iterations: None, conductivity: 0.25, converge_tol: 1e-6 }
    }
}

impl HeatParams {
    pub fn validate(&self) -> Result<(), SkeletonError> {
        if !(self.conductivity > 0.0 && self.conductivity <= 0.25) {
            return Err(SkeletonError::InvalidParams("conductivity must lie in (0, 0.25]".into()));
        }
        if self.iterations == Some(0) {
            return Err(SkeletonError::InvalidParams("iterations must be at least 1".into()));
        }
        if !(self.converge_tol.is_finite() && self.converge_tol > 0.0) {
            return Err(SkeletonError::InvalidParams("converge_tol must be positive".into()));
        }
        Ok(())
    }

    pub fn iteration_cap(&self, spec: &GridSpec) -> usize {
        self.iterations.unwrap_or(4 * spec.nx.max(spec.ny))
    }
}

/// Binary stroke raster (1 = stroke).
#[derive(Clone, Debug, PartialEq)]
pub struct SketchRaster(pub MaskField);

impl SketchRaster {
    pub fn spec(&self) -> &GridSpec {
        self.0.spec()
    }

    pub fn pixels(&self) -> &MaskField {
        &self.0
    }

    pub fn into_mask(self) -> MaskField {
        self.0
    }
}

const N4: [(isize, isize); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
/// Counter-clockwise from east.
const N8: [(isize, isize); 8] = [(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)];

/// Mask pixels with a 4-neighbour outside the mask (or outside the image).
pub fn contour(mask: &MaskField) -> MaskField {
    let s = *mask.spec();
    MaskField::from_fn(s, |i, j| {
        mask.get(i, j) && N4.iter().any(|(di, dj)| !mask.get_signed(i as isize + di, j as isize + dj))
    })
}

/// Temperature map: contour fixed at 1, exterior fixed at 0, interior
/// relaxed with an explicit 5-point scheme.
pub fn heat_map(mask: &MaskField, params: &HeatParams) -> Result<ScalarField, SkeletonError> {
    params.validate()?;
    if mask.is_empty() {
        return Err(SkeletonError::EmptyMask);
    }
    let s = *mask.spec();
    let (nx, ny) = (s.nx, s.ny);
    let edge = contour(mask);
    let interior: Vec<usize> =
        (0..s.cells()).filter(|&k| mask.cells()[k] && !edge.cells()[k]).collect();
    let mut t: Vec<f64> = edge.cells().iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
    let mut next = t.clone();
    let k = params.conductivity;
    for _ in 0..params.iteration_cap(&s) {
        let mut change = 0.0f64;
        for &c in &interior {
            // interior pixels have all four neighbours inside the image and mask
            let lap = t[c - 1] + t[c + 1] + t[c - nx] + t[c + nx] - 4.0 * t[c];
            let v = t[c] + k * lap;
            change = change.max((v - t[c]).abs());
            next[c] = v;
        }
        std::mem::swap(&mut t, &mut next);
        if change < params.converge_tol {
            break;
        }
    }
    debug_assert!(ny > 0);
    Ok(ScalarField::from_values(s, t).expect("heat map layout"))
}

#[inline]
fn at(on: &[bool], nx: usize, ny: usize, i: isize, j: isize) -> bool {
    i >= 0 && j >= 0 && (i as usize) < nx && (j as usize) < ny && on[j as usize * nx + i as usize]
}

fn neighbour_bits(on: &[bool], nx: usize, ny: usize, i: usize, j: usize) -> [bool; 8] {
    let mut b = [false; 8];
    for (k, (di, dj)) in N8.iter().enumerate() {
        b[k] = at(on, nx, ny, i as isize + di, j as isize + dj);
    }
    b
}

/// Yokoi 8-connectivity number; a foreground pixel is 8-simple iff it is 1.
fn connectivity_number(b: &[bool; 8]) -> u32 {
    let x = |k: usize| u32::from(!b[k % 8]);
    [0usize, 2, 4, 6].iter().map(|&k| x(k) - x(k) * x(k + 1) * x(k + 2)).sum()
}

fn is_simple(on: &[bool], nx: usize, ny: usize, i: usize, j: usize) -> bool {
    connectivity_number(&neighbour_bits(on, nx, ny, i, j)) == 1
}

fn neighbour_count(on: &[bool], nx: usize, ny: usize, i: usize, j: usize) -> usize {
    neighbour_bits(on, nx, ny, i, j).iter().filter(|b| **b).count()
}

/// Ridge pixels of `coldness`: strict interior pixels that are a maximum
/// along the direction of strongest negative curvature, plus contour pixels
/// with no strict interior pixel around them (parts at most two pixels wide,
/// where the heat map carries no width information).
fn ridge_anchors(cold: &[f64], on: &[bool], strict_interior: &[bool], nx: usize, ny: usize) -> Vec<bool> {
    let value = |i: isize, j: isize| -> f64 {
        if at(on, nx, ny, i, j) {
            cold[j as usize * nx + i as usize]
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut out = vec![false; on.len()];
    for j in 0..ny {
        for i in 0..nx {
            let c = j * nx + i;
            let (ii, jj) = (i as isize, j as isize);
            if !on[c] {
                continue;
            }
            if !strict_interior[c] {
                out[c] = !N8.iter().any(|(di, dj)| {
                    let (a, b) = (ii + di, jj + dj);
                    at(strict_interior, nx, ny, a, b)
                });
                continue;
            }
            // strict interior pixels have all 8 neighbours in the mask
            let v = cold[c];
            let fxx = cold[c + 1] + cold[c - 1] - 2.0 * v;
            let fyy = cold[c + nx] + cold[c - nx] - 2.0 * v;
            let fxy = 0.25 * (cold[c + nx + 1] + cold[c - nx - 1] - cold[c + nx - 1] - cold[c - nx + 1]);
            let half_gap = (0.25 * (fxx - fyy).powi(2) + fxy * fxy).sqrt();
            let lambda_min = 0.5 * (fxx + fyy) - half_gap;
            let lambda_max = 0.5 * (fxx + fyy) + half_gap;
            let peak = N8.iter().all(|(di, dj)| v >= value(ii + di, jj + dj));
            if peak {
                out[c] = true;
                continue;
            }
            // isotropic curvature has no ridge direction
            if lambda_min >= 0.0 || 2.0 * half_gap < MIN_ANISOTROPY * (lambda_min.abs() + lambda_max.abs()) {
                continue;
            }
            // unit step along the smaller eigenvalue's eigenvector
            let theta = 0.5 * (2.0 * fxy).atan2(fxx - fyy) + std::f64::consts::FRAC_PI_2;
            let (ex, ey) = (theta.cos(), theta.sin());
            let interp = |x: f64, y: f64| -> f64 {
                let (x0, y0) = (x.floor(), y.floor());
                let (fx, fy) = (x - x0, y - y0);
                let g = |a: f64, b: f64| -> f64 {
                    let (a, b) = (a as isize, b as isize);
                    if at(on, nx, ny, a, b) {
                        cold[b as usize * nx + a as usize]
                    } else {
                        0.0
                    }
                };
                let lo = g(x0, y0) * (1.0 - fx) + g(x0 + 1.0, y0) * fx;
                let hi = g(x0, y0 + 1.0) * (1.0 - fx) + g(x0 + 1.0, y0 + 1.0) * fx;
                lo * (1.0 - fy) + hi * fy
            };
            let (x, y) = (i as f64, j as f64);
            let a = interp(x + ex, y + ey);
            let b = interp(x - ex, y - ey);
            out[c] = v >= a && v >= b && (v > a || v > b);
        }
    }
    out
}

#[derive(PartialEq)]
struct Candidate {
    heat: f64,
    idx: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, o: &Self) -> Ordering {
        self.heat.total_cmp(&o.heat).then_with(|| Reverse(self.idx).cmp(&Reverse(o.idx)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Hottest-first removal of simple, unanchored pixels.
fn ordered_thinning(on: &mut [bool], heat: &[f64], anchors: &[bool], nx: usize, ny: usize) {
    let mut heap: BinaryHeap<Candidate> =
        (0..on.len()).filter(|&k| on[k] && !anchors[k]).map(|k| Candidate { heat: heat[k], idx: k }).collect();
    while let Some(Candidate { idx, .. }) = heap.pop() {
        if !on[idx] || anchors[idx] {
            continue;
        }
        let (i, j) = (idx % nx, idx / nx);
        if !is_simple(on, nx, ny, i, j) {
            continue;
        }
        on[idx] = false;
        for (di, dj) in N8 {
            let (a, b) = (i as isize + di, j as isize + dj);
            if at(on, nx, ny, a, b) {
                let k = b as usize * nx + a as usize;
                if !anchors[k] {
                    heap.push(Candidate { heat: heat[k], idx: k });
                }
            }
        }
    }
}

/// Directional sequential thinning down to an 8-thin set; endpoints kept.
fn directional_thinning(on: &mut [bool], nx: usize, ny: usize) {
    loop {
        let mut changed = false;
        for (di, dj) in [(0isize, 1isize), (0, -1), (1, 0), (-1, 0)] {
            for j in 0..ny {
                for i in 0..nx {
                    let c = j * nx + i;
                    if !on[c] || at(on, nx, ny, i as isize + di, j as isize + dj) {
                        continue;
                    }
                    if neighbour_count(on, nx, ny, i, j) >= 2 && is_simple(on, nx, ny, i, j) {
                        on[c] = false;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// Removes end branches shorter than [`MIN_BRANCH`] that hang off a junction.
fn prune_spurs(on: &mut [bool], nx: usize, ny: usize) -> bool {
    let mut removed_any = false;
    let ends: Vec<usize> =
        (0..on.len()).filter(|&k| on[k] && neighbour_count(on, nx, ny, k % nx, k / nx) == 1).collect();
    for start in ends {
        if !on[start] {
            continue;
        }
        let mut path = vec![start];
        let mut prev = usize::MAX;
        let mut cur = start;
        let reached_junction = loop {
            let (i, j) = (cur % nx, cur / nx);
            let nbrs: Vec<usize> = N8
                .iter()
                .filter_map(|(di, dj)| {
                    let (a, b) = (i as isize + di, j as isize + dj);
                    at(on, nx, ny, a, b).then(|| b as usize * nx + a as usize)
                })
                .filter(|&k| k != prev && !path.contains(&k))
                .collect();
            if cur != start && nbrs.len() >= 2 {
                break true;
            }
            if nbrs.is_empty() || path.len() > MIN_BRANCH {
                break false;
            }
            if nbrs.len() >= 2 {
                break false;
            }
            prev = cur;
            cur = nbrs[0];
            path.push(cur);
        };
        // `path` ends at the junction pixel, which stays
        if reached_junction && path.len() - 1 < MIN_BRANCH {
            for &k in &path[..path.len() - 1] {
                on[k] = false;
            }
            removed_any = true;
        }
    }
    removed_any
}

/// Skeleton of `mask` guided by its heat map.
pub fn extract_ridge(heat: &ScalarField, mask: &MaskField) -> Result<SketchRaster, SkeletonError> {
    let s = *mask.spec();
    if !s.same_dims(heat.spec()) {
        return Err(SkeletonError::GridMismatch);
    }
    let (nx, ny) = (s.nx, s.ny);
    let mut on = mask.cells().to_vec();
    let edge = contour(mask);
    let strict_interior: Vec<bool> = on.iter().zip(edge.cells()).map(|(m, e)| *m && !*e).collect();
    let cold: Vec<f64> = heat.values().iter().zip(&on).map(|(t, m)| if *m { 1.0 - t } else { 0.0 }).collect();
    let anchors = ridge_anchors(&cold, &on, &strict_interior, nx, ny);
    ordered_thinning(&mut on, heat.values(), &anchors, nx, ny);
    directional_thinning(&mut on, nx, ny);
    if prune_spurs(&mut on, nx, ny) {
        directional_thinning(&mut on, nx, ny);
    }
    Ok(SketchRaster(MaskField::from_cells(s, on).expect("skeleton layout")))
}

/// `heat_map` followed by `extract_ridge`.
pub fn synthetic_sketch(mask: &MaskField, params: &HeatParams) -> Result<SketchRaster, SkeletonError> {
    let heat = heat_map(mask, params)?;
    extract_ridge(&heat, mask)
}

/// Counting helpers used for topology checks.
pub mod topology {
    use super::*;

    /// Number of 8-connected foreground components.
    pub fn components_8(mask: &MaskField) -> usize {
        let s = *mask.spec();
        let (nx, ny) = (s.nx, s.ny);
        let on = mask.cells();
        let mut seen = vec![false; on.len()];
        let mut count = 0;
        let mut stack = Vec::new();
        for k in 0..on.len() {
            if !on[k] || seen[k] {
                continue;
            }
            count += 1;
            seen[k] = true;
            stack.push(k);
            while let Some(c) = stack.pop() {
                let (i, j) = ((c % nx) as isize, (c / nx) as isize);
                for (di, dj) in N8 {
                    if at(on, nx, ny, i + di, j + dj) {
                        let n = (j + dj) as usize * nx + (i + di) as usize;
                        if !seen[n] {
                            seen[n] = true;
                            stack.push(n);
                        }
                    }
                }
            }
        }
        count
    }

    /// Share of pixels with more than two neighbours that do not belong to a
    /// junction. Crowded pixels (three or more neighbours) are grouped into
    /// 8-connected clusters; a cluster is a junction when the pixels around it
    /// form at least three separate branches.
    pub fn thinness_violation(mask: &MaskField) -> f64 {
        let s = *mask.spec();
        let (nx, ny) = (s.nx, s.ny);
        let on = mask.cells();
        let crowded: Vec<bool> =
            (0..on.len()).map(|k| on[k] && neighbour_count(on, nx, ny, k % nx, k / nx) > 2).collect();
        let nbrs = |c: usize| {
            let (i, j) = ((c % nx) as isize, (c / nx) as isize);
            N8.iter().filter_map(move |(di, dj)| {
                let (a, b) = (i + di, j + dj);
                (a >= 0 && b >= 0 && (a as usize) < nx && (b as usize) < ny).then(|| b as usize * nx + a as usize)
            })
        };
        let mut seen = vec![false; on.len()];
        let mut bad = 0usize;
        for k in 0..on.len() {
            if !crowded[k] || seen[k] {
                continue;
            }
            let mut cluster = vec![k];
            seen[k] = true;
            let mut q = 0;
            while q < cluster.len() {
                let c = cluster[q];
                q += 1;
                for n in nbrs(c) {
                    if crowded[n] && !seen[n] {
                        seen[n] = true;
                        cluster.push(n);
                    }
                }
            }
            let mut rim: Vec<usize> = cluster.iter().flat_map(|&c| nbrs(c)).filter(|&n| on[n] && !crowded[n]).collect();
            rim.sort_unstable();
            rim.dedup();
            let mut branches = 0;
            let mut used = vec![false; rim.len()];
            for a in 0..rim.len() {
                if used[a] {
                    continue;
                }
                branches += 1;
                let mut stack = vec![a];
                used[a] = true;
                while let Some(x) = stack.pop() {
                    for b in 0..rim.len() {
                        if !used[b] && nbrs(rim[x]).any(|n| n == rim[b]) {
                            used[b] = true;
                            stack.push(b);
                        }
                    }
                }
            }
            if branches < 3 {
                bad += cluster.len();
            }
        }
        bad as f64 / mask.count().max(1) as f64
    }

    /// Number of 4-connected background components not touching the image border.
    pub fn holes(mask: &MaskField) -> usize {
        let s = *mask.spec();
        let (nx, ny) = (s.nx as isize + 2, s.ny as isize + 2);
        let bg = |i: isize, j: isize| -> bool {
            if i < 0 || j < 0 || i >= nx || j >= ny {
                return false;
            }
            !mask.get_signed(i - 1, j - 1)
        };
        let mut seen = vec![false; (nx * ny) as usize];
        let mut count = 0;
        let mut stack = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let k = (j * nx + i) as usize;
                if seen[k] || !bg(i, j) {
                    continue;
                }
                count += 1;
                seen[k] = true;
                stack.push((i, j));
                while let Some((a, b)) = stack.pop() {
                    for (di, dj) in N4 {
                        let (c, d) = (a + di, b + dj);
                        if bg(c, d) && !seen[(d * nx + c) as usize] {
                            seen[(d * nx + c) as usize] = true;
                            stack.push((c, d));
                        }
                    }
                }
            }
        }
        // the padded frame makes the outside a single component
        count - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> GridSpec {
        GridSpec::square(n).unwrap()
    }

    #[test]
    fn single_pixel_is_contour_at_full_temperature() {
        let mut m = MaskField::empty(spec(8));
        m.set(3, 4, true);
        let h = heat_map(&m, &HeatParams::default()).unwrap();
        assert_eq!(h.get(3, 4), 1.0);
        let sk = synthetic_sketch(&m, &HeatParams::default()).unwrap();
        assert_eq!(sk.pixels(), &m);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let m = MaskField::empty(spec(8));
        assert!(matches!(heat_map(&m, &HeatParams::default()), Err(SkeletonError::EmptyMask)));
        assert!(synthetic_sketch(&m, &HeatParams::default()).is_err());
    }

    #[test]
    fn temperatures_obey_maximum_principle() {
        let s = spec(32);
        let m = MaskField::from_fn(s, |i, j| {
            let (x, y) = (i as f64 - 15.5, j as f64 - 15.5);
            x * x + y * y <= 100.0
        });
        let h = heat_map(&m, &HeatParams::default()).unwrap();
        for k in 0..s.cells() {
            let t = h.values()[k];
            if m.cells()[k] {
                assert!(t > 0.0 && t <= 1.0, "t = {t}");
            } else {
                assert_eq!(t, 0.0);
            }
        }
    }

    #[test]
    fn connectivity_number_cases() {
        let mut b = [false; 8];
        assert_eq!(connectivity_number(&b), 0);
        b[0] = true;
        assert_eq!(connectivity_number(&b), 1);
        b[4] = true;
        assert_eq!(connectivity_number(&b), 2);
        assert_eq!(connectivity_number(&[true; 8]), 0);
    }

    #[test]
    fn params_validation() {
        assert!(HeatParams { conductivity: 0.3, ..Default::default() }.validate().is_err());
        assert!(HeatParams { iterations: Some(0), ..Default::default() }.validate().is_err());
        assert_eq!(HeatParams::default().iteration_cap(&spec(256)), 1024);
    }

    #[test]
    fn topology_counts() {
        let s = spec(12);
        let ring = MaskField::from_fn(s, |i, j| (2..=8).contains(&i) && (2..=8).contains(&j) && !((4..=6).contains(&i) && (4..=6).contains(&j)));
        assert_eq!(topology::components_8(&ring), 1);
        assert_eq!(topology::holes(&ring), 1);
        let dots = MaskField::from_fn(s, |i, j| i % 4 == 0 && j % 4 == 0);
        assert_eq!(topology::components_8(&dots), 9);
        assert_eq!(topology::holes(&dots), 0);
    }
}

//! Sketch documents and guide providers.
//!
//! A provider turns a [`SketchDoc`] into [`GuideFields`]: a guide velocity
//! `u_g` and the region `omega` where guiding applies. The baseline provider
//! is procedural; external providers run out of process and exchange files:
//!
//! ```text
//! request.json  {"grid":[nx,ny],"dx":dx,"sketch":"sketch.png","want":["lcs","vf"]}
//! sketch.png    1-bit, black strokes on white
//! lcs.png       provider output, white inside the region
//! vf.dsfld      provider output, 2-component velocity raster
//! ```
//!
//! The command runs through `sh -c` with the request directory as working
//! directory and in `DUALSMOKE_REQUEST_DIR`.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{image, raster, FieldError, GridSpec, MaskField, Vec2, VelocityField};

pub const DEFAULT_STROKE_WIDTH: f64 = 3.0;
pub const DEFAULT_PROVIDER_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Error)]
pub enum GuideError {
    #[error("invalid sketch: {0}")]
    InvalidSketch(String),
    #[error("sketch has no smoke stroke")]
    NoSmokeStroke,
    #[error("provider failed: {reason}")]
    Provider { reason: String, stderr: String, dir: Option<PathBuf> },
    #[error("provider timed out after {secs:.1} s (request kept in {dir})")]
    Timeout { secs: f64, dir: PathBuf },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrokeKind {
    Smoke,
    Obstacle,
}

fn default_width() -> f64 {
    DEFAULT_STROKE_WIDTH
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub kind: StrokeKind,
    /// World-space polyline.
    pub points: Vec<[f64; 2]>,
    /// Width in cells.
    #[serde(default = "default_width")]
    pub width: f64,
}

impl Stroke {
    pub fn new(kind: StrokeKind, points: Vec<[f64; 2]>) -> Self {
        Stroke { kind, points, width: DEFAULT_STROKE_WIDTH }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchDoc {
    pub canvas: GridSpec,
    #[serde(default)]
    pub strokes: Vec<Stroke>,
}

impl SketchDoc {
    pub fn new(canvas: GridSpec) -> Self {
        SketchDoc { canvas, strokes: Vec::new() }
    }

    pub fn with_stroke(mut self, stroke: Stroke) -> Self {
        self.strokes.push(stroke);
        self
    }

    pub fn validate(&self) -> Result<(), GuideError> {
        self.canvas.validate().map_err(|e| GuideError::InvalidSketch(e.to_string()))?;
        for (k, s) in self.strokes.iter().enumerate() {
            if s.points.len() < 2 {
                return Err(GuideError::InvalidSketch(format!("stroke {k} has fewer than 2 points")));
            }
            if !(s.width.is_finite() && s.width > 0.0) {
                return Err(GuideError::InvalidSketch(format!("stroke {k} has invalid width {}", s.width)));
            }
            if s.points.iter().flatten().any(|c| !c.is_finite()) {
                return Err(GuideError::InvalidSketch(format!("stroke {k} has a non-finite point")));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, GuideError> {
        let doc: SketchDoc = serde_json::from_str(text).map_err(|e| GuideError::InvalidSketch(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sketch serializes")
    }

    pub fn has_smoke(&self) -> bool {
        self.strokes.iter().any(|s| s.kind == StrokeKind::Smoke)
    }

    /// Polylines of the given kind with points clamped into the canvas.
    fn polylines(&self, kind: StrokeKind) -> Vec<(Vec<Vec2>, f64)> {
        self.strokes
            .iter()
            .filter(|s| s.kind == kind)
            .map(|s| (s.points.iter().map(|p| self.canvas.clamp(Vec2::from(*p))).collect(), s.width))
            .collect()
    }

    /// Translates every stroke by `(di, dj)` cells.
    pub fn translated(&self, di: f64, dj: f64) -> SketchDoc {
        let mut out = self.clone();
        let (ox, oy) = (di * self.canvas.dx, dj * self.canvas.dx);
        for s in &mut out.strokes {
            for p in &mut s.points {
                p[0] += ox;
                p[1] += oy;
            }
        }
        out
    }
}

/// Closest point on segment `ab` to `p`, as `(distance, parameter)`.
fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 { ((p - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let q = a + ab * t;
    ((p - q).norm(), t)
}

fn stamp_capsules(spec: GridSpec, lines: &[(Vec<Vec2>, f64)], radius: impl Fn(f64) -> f64) -> MaskField {
    MaskField::from_fn(spec, |i, j| {
        let p = spec.cell_center(i, j);
        lines.iter().any(|(pts, w)| {
            let r = radius(*w);
            pts.windows(2).any(|seg| segment_distance(p, seg[0], seg[1]).0 <= r)
        })
    })
}

/// Obstacle strokes as filled capsules of the stroke width.
pub fn rasterize_obstacles(doc: &SketchDoc) -> MaskField {
    let dx = doc.canvas.dx;
    stamp_capsules(doc.canvas, &doc.polylines(StrokeKind::Obstacle), |w| 0.5 * w * dx)
}

/// Smoke strokes drawn one cell wide: every cell a dense walk along a
/// segment passes through.
pub fn rasterize_sketch(doc: &SketchDoc) -> MaskField {
    let s = doc.canvas;
    let mut m = MaskField::empty(s);
    for (pts, _) in doc.polylines(StrokeKind::Smoke) {
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let n = (((b - a).norm() / s.dx) * 4.0).ceil().max(1.0) as usize;
            for k in 0..=n {
                let p = a + (b - a) * (k as f64 / n as f64);
                let i = ((p.x / s.dx).floor() as usize).min(s.nx - 1);
                let j = ((p.y / s.dx).floor() as usize).min(s.ny - 1);
                m.set(i, j, true);
            }
        }
    }
    m
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "lowercase")]
pub enum Provenance {
    Baseline,
    External(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuideFields {
    pub u_g: VelocityField,
    pub omega: MaskField,
    pub provenance: Provenance,
}

impl GuideFields {
    pub fn validate(&self, canvas: &GridSpec) -> Result<(), FieldError> {
        for s in [self.u_g.spec(), self.omega.spec()] {
            if !s.same_dims(canvas) {
                return Err(FieldError::DimensionMismatch { expected: (canvas.nx, canvas.ny), found: (s.nx, s.ny) });
            }
        }
        if !self.u_g.is_finite() {
            return Err(FieldError::NonFinite("guide velocity"));
        }
        Ok(())
    }

    /// No guidance: zero field, empty region.
    pub fn none(spec: GridSpec) -> Self {
        GuideFields { u_g: VelocityField::zeros(spec), omega: MaskField::empty(spec), provenance: Provenance::Baseline }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineParams {
    /// Band radius in cells.
    pub radius: f64,
    pub speed: f64,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams { radius: 4.0, speed: 1.0 }
    }
}

/// Flips `t` into the upper half plane; horizontal tangents point to +x.
fn upward(t: Vec2) -> Vec2 {
    if t.y < 0.0 || (t.y == 0.0 && t.x < 0.0) {
        -t
    } else {
        t
    }
}

/// Unit tangent of the polyline at the point nearest to `p`.
fn tangent_at(pts: &[Vec2], seg: usize, t: f64) -> Vec2 {
    let dir = |k: usize| (pts[k + 1] - pts[k]).normalized();
    let own = dir(seg);
    let neighbour = if t >= 1.0 && seg + 2 < pts.len() {
        dir(seg + 1)
    } else if t <= 0.0 && seg > 0 {
        dir(seg - 1)
    } else {
        None
    };
    let combined = match (own, neighbour) {
        (Some(a), Some(b)) => (a + b).normalized().or(Some(a)),
        (a, b) => a.or(b),
    };
    combined.unwrap_or(Vec2::new(0.0, 1.0))
}

pub fn baseline_guide(doc: &SketchDoc) -> Result<GuideFields, GuideError> {
    baseline_guide_with(doc, &BaselineParams::default())
}

/// Procedural guide: a band of radius `r` around the smoke strokes with
/// velocity along the upward-oriented stroke tangent, `s` on the stroke
/// falling linearly to `0.5 s` at the band edge.
pub fn baseline_guide_with(doc: &SketchDoc, params: &BaselineParams) -> Result<GuideFields, GuideError> {
    doc.validate()?;
    if !(params.radius > 0.0 && params.speed.is_finite()) {
        return Err(GuideError::InvalidSketch("baseline radius must be positive and speed finite".into()));
    }
    let lines = doc.polylines(StrokeKind::Smoke);
    if lines.is_empty() {
        return Err(GuideError::NoSmokeStroke);
    }
    let s = doc.canvas;
    let r = params.radius * s.dx;
    let mut cu = vec![0.0; s.cells()];
    let mut cv = vec![0.0; s.cells()];
    let mut omega = MaskField::empty(s);
    for j in 0..s.ny {
        for i in 0..s.nx {
            let p = s.cell_center(i, j);
            let mut best: Option<(f64, usize, usize, f64)> = None;
            for (l, (pts, _)) in lines.iter().enumerate() {
                for k in 0..pts.len() - 1 {
                    let (d, t) = segment_distance(p, pts[k], pts[k + 1]);
                    if best.is_none_or(|b| d < b.0) {
                        best = Some((d, l, k, t));
                    }
                }
            }
            let (d, l, k, t) = best.expect("at least one segment");
            if d > r {
                continue;
            }
            omega.set(i, j, true);
            let tan = upward(tangent_at(&lines[l].0, k, t));
            let mag = params.speed * (1.0 - 0.5 * d / r);
            let c = s.idx(i, j);
            cu[c] = mag * tan.x;
            cv[c] = mag * tan.y;
        }
    }
    let u_g = VelocityField::from_centered(s, &cu, &cv)?;
    Ok(GuideFields { u_g, omega, provenance: Provenance::Baseline })
}

/// Out-of-process provider command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub command: String,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(with = "secs", default = "default_timeout")]
    pub timeout: Duration,
}

fn default_timeout() -> Duration {
    DEFAULT_PROVIDER_TIMEOUT
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl ProviderSpec {
    pub fn new(command: impl Into<String>) -> Self {
        ProviderSpec { command: command.into(), name: None, timeout: DEFAULT_PROVIDER_TIMEOUT }
    }

    pub fn display_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| self.command.split_whitespace().next().unwrap_or("provider").to_string())
    }
}

#[derive(Serialize)]
struct ProviderRequest<'a> {
    grid: [usize; 2],
    dx: f64,
    sketch: &'a str,
    want: [&'a str; 2],
}

fn tail(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap_or_default();
    let start = text.len().saturating_sub(4000);
    let start = (start..=text.len()).find(|&k| text.is_char_boundary(k)).unwrap_or(text.len());
    text[start..].to_string()
}

/// Runs an external provider on `doc` and validates what it returns.
/// On failure the request directory is kept and reported in the error.
pub fn external_guide(doc: &SketchDoc, provider: &ProviderSpec) -> Result<GuideFields, GuideError> {
    doc.validate()?;
    let s = doc.canvas;
    let dir = tempfile::Builder::new().prefix("dualsmoke-provider-").tempdir()?;
    let root = dir.path().to_path_buf();
    let request = ProviderRequest { grid: [s.nx, s.ny], dx: s.dx, sketch: "sketch.png", want: ["lcs", "vf"] };
    fs::write(root.join("request.json"), serde_json::to_vec_pretty(&request).expect("request serializes"))?;
    image::write_sketch_png(root.join("sketch.png"), &rasterize_sketch(doc))?;

    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&provider.command)
        .current_dir(&root)
        .env("DUALSMOKE_REQUEST_DIR", &root)
        .stdin(Stdio::null())
        .stdout(File::create(root.join("stdout.log"))?)
        .stderr(File::create(root.join("stderr.log"))?)
        .spawn()?;
    let started = Instant::now();
    let status = loop {
        if let Some(st) = child.try_wait()? {
            break st;
        }
        if started.elapsed() >= provider.timeout {
            let _ = child.kill();
            let _ = child.wait();
            let kept = dir.keep();
            log::warn!("provider {} timed out; request kept in {}", provider.display_name(), kept.display());
            return Err(GuideError::Timeout { secs: provider.timeout.as_secs_f64(), dir: kept });
        }
        std::thread::sleep(Duration::from_millis(5));
    };

    let fail = |reason: String, dir: tempfile::TempDir| {
        let stderr = tail(&dir.path().join("stderr.log"));
        GuideError::Provider { reason, stderr, dir: Some(dir.keep()) }
    };
    if !status.success() {
        return Err(fail(format!("exit status {status}"), dir));
    }
    let omega = match image::read_mask_png(root.join("lcs.png"), Some(s)) {
        Ok(m) => m,
        Err(e) => return Err(fail(format!("lcs.png: {e}"), dir)),
    };
    let u_g = match raster::read_velocity(root.join("vf.dsfld")) {
        Ok(v) => v,
        Err(e) => return Err(fail(format!("vf.dsfld: {e}"), dir)),
    };
    let guide = GuideFields { u_g, omega, provenance: Provenance::External(provider.display_name()) };
    if let Err(e) = guide.validate(&s) {
        return Err(fail(format!("invalid output: {e}"), dir));
    }
    Ok(guide)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canvas() -> GridSpec {
        GridSpec::square(32).unwrap()
    }

    #[test]
    fn json_round_trip_and_default_width() {
        let text = r#"{"canvas":{"nx":32,"ny":32},"strokes":[{"kind":"smoke","points":[[4,4],[4,20]]}]}"#;
        let doc = SketchDoc::from_json(text).unwrap();
        assert_eq!(doc.strokes[0].width, 3.0);
        assert_eq!(doc.canvas.dx, 1.0);
        assert_eq!(SketchDoc::from_json(&doc.to_json()).unwrap(), doc);
    }

    #[test]
    fn invalid_documents() {
        let one = SketchDoc::new(canvas()).with_stroke(Stroke::new(StrokeKind::Smoke, vec![[1.0, 1.0]]));
        assert!(matches!(one.validate(), Err(GuideError::InvalidSketch(_))));
        let bad_kind = r#"{"canvas":{"nx":32,"ny":32},"strokes":[{"kind":"fire","points":[[0,0],[1,1]]}]}"#;
        assert!(SketchDoc::from_json(bad_kind).is_err());
        let obstacle_only =
            SketchDoc::new(canvas()).with_stroke(Stroke::new(StrokeKind::Obstacle, vec![[1.0, 1.0], [9.0, 9.0]]));
        assert!(matches!(baseline_guide(&obstacle_only), Err(GuideError::NoSmokeStroke)));
    }

    #[test]
    fn no_obstacles_gives_empty_mask() {
        let doc = SketchDoc::new(canvas()).with_stroke(Stroke::new(StrokeKind::Smoke, vec![[4.0, 4.0], [4.0, 20.0]]));
        assert!(rasterize_obstacles(&doc).is_empty());
    }

    #[test]
    fn tangent_averages_at_vertices() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0)];
        let t = tangent_at(&pts, 0, 1.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((t.x - h).abs() < 1e-12 && (t.y - h).abs() < 1e-12);
        assert_eq!(upward(Vec2::new(0.0, -1.0)), Vec2::new(0.0, 1.0));
        assert_eq!(upward(Vec2::new(-1.0, 0.0)), Vec2::new(1.0, 0.0));
    }

    #[test]
    fn provider_spec_name() {
        let p = ProviderSpec::new("python3 serve.py --ckpt x");
        assert_eq!(p.display_name(), "python3");
        assert_eq!(p.timeout, Duration::from_secs(10));
    }
}

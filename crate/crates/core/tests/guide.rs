use std::path::Path;
use std::time::Duration;

use dualsmoke_core::field::{image, raster};
use dualsmoke_core::guide::{
    baseline_guide, baseline_guide_with, external_guide, rasterize_obstacles, rasterize_sketch, BaselineParams,
    GuideError, Provenance, ProviderSpec, SketchDoc, Stroke, StrokeKind,
};
use dualsmoke_core::{GridSpec, MaskField, Vec2, VelocityField};
use proptest::prelude::*;

fn canvas() -> GridSpec {
    GridSpec::square(64).unwrap()
}

fn smoke(points: Vec<[f64; 2]>) -> SketchDoc {
    SketchDoc::new(canvas()).with_stroke(Stroke::new(StrokeKind::Smoke, points))
}

/// Point-in-capsule by brute force over cell centers.
fn capsule_oracle(spec: GridSpec, a: [f64; 2], b: [f64; 2], r: f64) -> MaskField {
    MaskField::from_fn(spec, |i, j| {
        let (px, py) = ((i as f64 + 0.5) * spec.dx, (j as f64 + 0.5) * spec.dx);
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let t = (((px - a[0]) * ex + (py - a[1]) * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
        let (qx, qy) = (a[0] + t * ex, a[1] + t * ey);
        ((px - qx).powi(2) + (py - qy).powi(2)).sqrt() <= r
    })
}

#[test]
fn horizontal_obstacle_capsule() {
    let s = canvas();
    let doc = SketchDoc::new(s).with_stroke(Stroke::new(StrokeKind::Obstacle, vec![[10.5, 20.5], [20.5, 20.5]]));
    let m = rasterize_obstacles(&doc);
    assert_eq!(m, capsule_oracle(s, [10.5, 20.5], [20.5, 20.5], 1.5));
    let rows: Vec<usize> = (0..s.ny).filter(|&j| (0..s.nx).any(|i| m.get(i, j))).collect();
    assert_eq!(rows, vec![19, 20, 21]);
    // 10 cells along the stroke plus one cap cell at each end, 3 rows thick
    assert_eq!(m.count(), 13 * 3);
    assert!(m.get(9, 20) && m.get(21, 20) && !m.get(8, 20) && !m.get(22, 20));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn obstacle_mask_matches_capsule_scan(
        a in prop::array::uniform2(1.0f64..63.0),
        b in prop::array::uniform2(1.0f64..63.0),
        w in 1.0f64..9.0,
    ) {
        prop_assume!((a[0] - b[0]).abs() + (a[1] - b[1]).abs() > 1e-3);
        let s = canvas();
        let mut stroke = Stroke::new(StrokeKind::Obstacle, vec![a, b]);
        stroke.width = w;
        let m = rasterize_obstacles(&SketchDoc::new(s).with_stroke(stroke));
        prop_assert_eq!(m.count(), capsule_oracle(s, a, b, 0.5 * w).count());
    }

    #[test]
    fn baseline_region_covers_the_stroke_raster_and_flows_upward(
        pts in prop::collection::vec(prop::array::uniform2(2.0f64..62.0), 2..6),
    ) {
        let doc = smoke(pts);
        let g = baseline_guide(&doc).unwrap();
        prop_assert!(rasterize_sketch(&doc).is_subset_of(&g.omega));
        prop_assert!(g.u_g.v().iter().all(|v| *v >= 0.0));
        prop_assert!(!g.omega.is_empty());
        prop_assert!(g.u_g.is_finite());
    }
}

#[test]
fn vertical_stroke_points_up_at_full_speed() {
    let doc = smoke(vec![[32.5, 8.0], [32.5, 56.0]]);
    let g = baseline_guide(&doc).unwrap();
    assert_eq!(g.provenance, Provenance::Baseline);
    for j in 12..52 {
        let c = g.u_g.center(32, j);
        assert!((c - Vec2::new(0.0, 1.0)).norm() <= 0.05, "{j}: {c:?}");
    }
    // band edge runs at half speed, outside is zero
    let edge = g.u_g.center(36, 30);
    assert!(g.omega.get(36, 30) && !g.omega.get(37, 30));
    assert!(edge.y > 0.45 && edge.y < 0.75);
    assert_eq!(g.u_g.center(45, 30), Vec2::ZERO);
}

#[test]
fn stroke_direction_does_not_matter() {
    let up = baseline_guide(&smoke(vec![[20.0, 8.0], [30.0, 30.0], [24.0, 52.0]])).unwrap();
    let down = baseline_guide(&smoke(vec![[24.0, 52.0], [30.0, 30.0], [20.0, 8.0]])).unwrap();
    assert_eq!(up.omega, down.omega);
    for (a, b) in up.u_g.u().iter().zip(down.u_g.u()).chain(up.u_g.v().iter().zip(down.u_g.v())) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn s_curve_velocity_follows_the_tangent() {
    let curve = |y: f64| 32.0 + 6.0 * (2.0 * std::f64::consts::PI * (y - 8.0) / 48.0).sin();
    let slope = |y: f64| 6.0 * 2.0 * std::f64::consts::PI / 48.0 * (2.0 * std::f64::consts::PI * (y - 8.0) / 48.0).cos();
    let pts: Vec<[f64; 2]> = (0..=96).map(|k| 8.0 + 0.5 * k as f64).map(|y| [curve(y), y]).collect();
    let doc = smoke(pts);
    let g = baseline_guide(&doc).unwrap();
    let mut checked = 0;
    for k in 8..88 {
        let y = 8.0 + 0.5 * k as f64 + 0.25;
        let p = Vec2::new(curve(y), y);
        let (i, j) = ((p.x).floor() as usize, (p.y).floor() as usize);
        let t = Vec2::new(slope(y), 1.0).normalized().unwrap();
        let u = g.u_g.sample(p);
        let align = u.dot(t).abs() / u.norm();
        assert!(align >= 0.99, "alignment {align} at ({i}, {j})");
        checked += 1;
    }
    assert_eq!(checked, 80);
}

#[test]
fn translation_moves_the_guide() {
    let doc = smoke(vec![[20.3, 10.2], [26.1, 24.7], [21.4, 40.9]]);
    let (di, dj) = (7usize, 5usize);
    let a = baseline_guide(&doc).unwrap();
    let b = baseline_guide(&doc.translated(di as f64, dj as f64)).unwrap();
    let s = canvas();
    for j in 0..s.ny - dj {
        for i in 0..s.nx - di {
            assert_eq!(a.omega.get(i, j), b.omega.get(i + di, j + dj), "({i}, {j})");
            let d = a.u_g.center(i, j) - b.u_g.center(i + di, j + dj);
            if i > 0 && j > 0 {
                assert!(d.norm() < 1e-9, "({i}, {j})");
            }
        }
    }
    assert_eq!(a.omega.count(), b.omega.count());
}

#[test]
fn band_radius_and_speed_are_configurable() {
    let doc = smoke(vec![[32.5, 8.0], [32.5, 56.0]]);
    let wide = baseline_guide_with(&doc, &BaselineParams { radius: 8.0, speed: 2.0 }).unwrap();
    let narrow = baseline_guide(&doc).unwrap();
    assert!(narrow.omega.is_subset_of(&wide.omega) && wide.omega.count() > narrow.omega.count());
    assert!((wide.u_g.center(32, 30).y - 2.0).abs() < 1e-9);
    assert!(baseline_guide_with(&doc, &BaselineParams { radius: 0.0, speed: 1.0 }).is_err());
}

#[test]
fn baseline_is_deterministic() {
    let doc = smoke(vec![[12.0, 6.0], [40.0, 33.0], [18.0, 60.0]]);
    assert_eq!(baseline_guide(&doc).unwrap(), baseline_guide(&doc).unwrap());
}

fn stored_pair(dir: &Path) -> (MaskField, VelocityField) {
    let s = canvas();
    let lcs = MaskField::from_fn(s, |i, j| (i + j) % 7 == 0 || (20..30).contains(&i));
    let vel = VelocityField::from_fn(s, |p| Vec2::new(0.01 * p.y, 0.5 + 0.01 * p.x));
    image::write_mask_png_1bit(dir.join("lcs.png"), &lcs).unwrap();
    raster::write_velocity(dir.join("vf.dsfld"), &vel).unwrap();
    (image::read_mask_png(dir.join("lcs.png"), Some(s)).unwrap(), raster::read_velocity(dir.join("vf.dsfld")).unwrap())
}

fn sh_quote(p: &Path) -> String {
    format!("'{}'", p.display())
}

#[test]
fn echo_provider_passes_files_through() {
    let store = tempfile::tempdir().unwrap();
    let capture = tempfile::tempdir().unwrap();
    let (lcs, vel) = stored_pair(store.path());
    let cmd = format!(
        "cp request.json sketch.png {cap} && cp {src}/lcs.png {src}/vf.dsfld .",
        cap = sh_quote(capture.path()),
        src = sh_quote(store.path())
    );
    let doc = smoke(vec![[32.5, 8.0], [32.5, 56.0]]);
    let g = external_guide(&doc, &ProviderSpec { name: Some("echo".into()), ..ProviderSpec::new(cmd) }).unwrap();
    assert_eq!(g.omega, lcs);
    assert_eq!(g.u_g, vel);
    assert_eq!(g.provenance, Provenance::External("echo".into()));

    let req: serde_json::Value =
        serde_json::from_slice(&std::fs::read(capture.path().join("request.json")).unwrap()).unwrap();
    assert_eq!(req["grid"], serde_json::json!([64, 64]));
    assert_eq!(req["sketch"], "sketch.png");
    assert_eq!(req["want"], serde_json::json!(["lcs", "vf"]));
    let sketch = image::read_sketch_png(capture.path().join("sketch.png"), Some(canvas())).unwrap();
    assert_eq!(sketch, rasterize_sketch(&doc));
}

#[test]
fn provider_nan_output_is_rejected() {
    let store = tempfile::tempdir().unwrap();
    stored_pair(store.path());
    let mut bytes = std::fs::read(store.path().join("vf.dsfld")).unwrap();
    let at = 24 + 4 * 100;
    bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    std::fs::write(store.path().join("vf.dsfld"), bytes).unwrap();
    let cmd = format!("cp {src}/lcs.png {src}/vf.dsfld .", src = sh_quote(store.path()));
    let err = external_guide(&smoke(vec![[10.0, 4.0], [10.0, 40.0]]), &ProviderSpec::new(cmd)).unwrap_err();
    match err {
        GuideError::Provider { reason, dir, .. } => {
            assert!(reason.contains("vf.dsfld"), "{reason}");
            let dir = dir.unwrap();
            assert!(dir.join("request.json").exists());
            std::fs::remove_dir_all(dir).unwrap();
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn provider_wrong_dimensions_are_rejected() {
    let store = tempfile::tempdir().unwrap();
    let small = GridSpec::square(16).unwrap();
    image::write_mask_png_1bit(store.path().join("lcs.png"), &MaskField::empty(small)).unwrap();
    raster::write_velocity(store.path().join("vf.dsfld"), &VelocityField::zeros(small)).unwrap();
    let cmd = format!("cp {src}/lcs.png {src}/vf.dsfld .", src = sh_quote(store.path()));
    let err = external_guide(&smoke(vec![[10.0, 4.0], [10.0, 40.0]]), &ProviderSpec::new(cmd)).unwrap_err();
    let GuideError::Provider { dir, .. } = err else { panic!("{err:?}") };
    std::fs::remove_dir_all(dir.unwrap()).unwrap();
}

#[test]
fn provider_timeout_keeps_the_request_dir() {
    let spec = ProviderSpec { timeout: Duration::from_millis(300), ..ProviderSpec::new("sleep 5") };
    let start = std::time::Instant::now();
    let err = external_guide(&smoke(vec![[10.0, 4.0], [10.0, 40.0]]), &spec).unwrap_err();
    assert!(start.elapsed() < Duration::from_secs(3));
    match err {
        GuideError::Timeout { secs, dir } => {
            assert!((secs - 0.3).abs() < 1e-9);
            assert!(dir.join("request.json").exists() && dir.join("sketch.png").exists());
            std::fs::remove_dir_all(dir).unwrap();
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn provider_failure_carries_stderr() {
    let err = external_guide(&smoke(vec![[10.0, 4.0], [10.0, 40.0]]), &ProviderSpec::new("echo no checkpoint >&2; exit 3"))
        .unwrap_err();
    match err {
        GuideError::Provider { reason, stderr, dir } => {
            assert!(reason.contains("exit"), "{reason}");
            assert!(stderr.contains("no checkpoint"));
            std::fs::remove_dir_all(dir.unwrap()).unwrap();
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn sketch_json_rejects_bad_strokes() {
    let s = canvas();
    let mut wide = Stroke::new(StrokeKind::Smoke, vec![[1.0, 1.0], [5.0, 5.0]]);
    wide.width = -1.0;
    assert!(SketchDoc::new(s).with_stroke(wide).validate().is_err());
    let nan = Stroke::new(StrokeKind::Smoke, vec![[f64::NAN, 1.0], [5.0, 5.0]]);
    assert!(SketchDoc::new(s).with_stroke(nan).validate().is_err());
    assert!(SketchDoc::from_json("{\"canvas\":{\"nx\":8,\"ny\":8},\"strokes\":[]}").unwrap().strokes.is_empty());
    // out-of-canvas points are clamped, not rejected
    let far = smoke(vec![[-10.0, 30.0], [100.0, 30.0]]);
    let g = baseline_guide(&far).unwrap();
    assert!(g.omega.get(0, 30) && g.omega.get(63, 30));
}

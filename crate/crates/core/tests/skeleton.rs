use dualsmoke_core::skeleton::{heat_map, synthetic_sketch, topology, HeatParams};
use dualsmoke_core::{GridSpec, MaskField};
use proptest::prelude::*;

fn spec(n: usize) -> GridSpec {
    GridSpec::square(n).unwrap()
}

fn cells(m: &MaskField) -> Vec<(i64, i64)> {
    let s = m.spec();
    let mut out = Vec::new();
    for j in 0..s.ny {
        for i in 0..s.nx {
            if m.get(i, j) {
                out.push((i as i64, j as i64));
            }
        }
    }
    out
}

fn erode_cross(m: &MaskField) -> MaskField {
    MaskField::from_fn(*m.spec(), |i, j| {
        let (i, j) = (i as isize, j as isize);
        [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)].iter().all(|(a, b)| m.get_signed(i + a, j + b))
    })
}

fn dilate_cross(m: &MaskField) -> MaskField {
    MaskField::from_fn(*m.spec(), |i, j| {
        let (i, j) = (i as isize, j as isize);
        [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)].iter().any(|(a, b)| m.get_signed(i + a, j + b))
    })
}

/// Lantuéjoul skeleton with the 3x3 cross structuring element.
fn morphological_skeleton(m: &MaskField) -> MaskField {
    let mut out = MaskField::empty(*m.spec());
    let mut cur = m.clone();
    while !cur.is_empty() {
        let opened = dilate_cross(&erode_cross(&cur));
        let s = *cur.spec();
        for j in 0..s.ny {
            for i in 0..s.nx {
                if cur.get(i, j) && !opened.get(i, j) {
                    out.set(i, j, true);
                }
            }
        }
        cur = erode_cross(&cur);
    }
    out
}

fn hausdorff(a: &MaskField, b: &MaskField) -> f64 {
    let (pa, pb) = (cells(a), cells(b));
    let directed = |x: &[(i64, i64)], y: &[(i64, i64)]| {
        x.iter()
            .map(|p| y.iter().map(|q| (((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)) as f64).sqrt()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(&pa, &pb).max(directed(&pb, &pa))
}

fn check_topology(mask: &MaskField, sk: &MaskField) {
    assert!(sk.is_subset_of(mask));
    assert_eq!(topology::components_8(sk), topology::components_8(mask), "component count");
    assert_eq!(topology::holes(sk), topology::holes(mask), "cycle count");
}

fn bar() -> MaskField {
    MaskField::from_fn(spec(64), |i, j| (10..=50).contains(&i) && (31..=33).contains(&j))
}

fn square(n: usize) -> MaskField {
    MaskField::from_fn(spec(48), move |i, j| (10..10 + n).contains(&i) && (10..10 + n).contains(&j))
}

fn annulus() -> MaskField {
    MaskField::from_fn(spec(48), |i, j| {
        let (x, y) = (i as f64 - 23.5, j as f64 - 23.5);
        let r2 = x * x + y * y;
        (64.0..=256.0).contains(&r2)
    })
}

#[test]
fn bar_gives_horizontal_centerline() {
    let m = bar();
    let sk = synthetic_sketch(&m, &HeatParams::default()).unwrap().into_mask();
    let pts = cells(&sk);
    assert!(pts.iter().all(|p| p.1 == 32), "{pts:?}");
    let lo = pts.iter().map(|p| p.0).min().unwrap();
    let hi = pts.iter().map(|p| p.0).max().unwrap();
    assert!(lo <= 12 && hi >= 48, "ends {lo}..{hi}");
    assert_eq!(pts.len() as i64, hi - lo + 1);
    let oracle = morphological_skeleton(&m);
    assert!(hausdorff(&sk, &oracle) <= 2.0);
    check_topology(&m, &sk);
}

#[test]
fn square_matches_morphological_skeleton() {
    for n in 9..=24 {
        let m = square(n);
        let sk = synthetic_sketch(&m, &HeatParams::default()).unwrap().into_mask();
        let h = hausdorff(&sk, &morphological_skeleton(&m));
        assert!(h <= 2.0, "n = {n}: hausdorff {h}");
        check_topology(&m, &sk);
        assert!(topology::thinness_violation(&sk) < 0.01);
    }
}

#[test]
fn annulus_keeps_one_cycle() {
    let m = annulus();
    let sk = synthetic_sketch(&m, &HeatParams::default()).unwrap().into_mask();
    assert_eq!(topology::holes(&sk), 1);
    assert_eq!(topology::components_8(&sk), 1);
    let h = hausdorff(&sk, &morphological_skeleton(&m));
    assert!(h <= 2.0, "hausdorff {h}");
    assert!(topology::thinness_violation(&sk) < 0.01);
}

#[test]
fn thin_curve_is_its_own_skeleton() {
    let s = spec(64);
    let mut m = MaskField::empty(s);
    for i in 5..60usize {
        let y = 32.0 + 12.0 * (i as f64 * 0.12).sin();
        m.set(i, y.round() as usize, true);
    }
    // bridge vertical gaps so the curve stays 8-connected and one pixel wide
    let mut prev: Option<usize> = None;
    let pts = cells(&m);
    let mut curve = MaskField::empty(s);
    let mut by_x: Vec<(usize, usize)> = pts.iter().map(|p| (p.0 as usize, p.1 as usize)).collect();
    by_x.sort();
    for (i, j) in by_x {
        if let Some(pj) = prev {
            let (a, b) = if pj < j { (pj + 1, j) } else { (j + 1, pj) };
            for y in a..b {
                curve.set(i, y, true);
            }
        }
        curve.set(i, j, true);
        prev = Some(j);
    }
    let sk = synthetic_sketch(&curve, &HeatParams::default()).unwrap().into_mask();
    assert_eq!(sk, curve);
}

#[test]
fn medial_region_is_coldest() {
    let m = square(21);
    let h = heat_map(&m, &HeatParams::default()).unwrap();
    let centre = h.get(20, 20);
    for k in 0..=9 {
        assert!(h.get(10 + k, 20) > h.get(11 + k, 20), "row profile not decreasing toward the centre");
    }
    assert!(centre < h.get(11, 20));
}

#[test]
fn two_components_stay_two() {
    let s = spec(64);
    let m = MaskField::from_fn(s, |i, j| {
        let a = (5..=25).contains(&i) && (5..=14).contains(&j);
        let (x, y) = (i as f64 - 45.0, j as f64 - 45.0);
        a || (x * x + y * y <= 100.0 && x * x + y * y >= 20.0)
    });
    let sk = synthetic_sketch(&m, &HeatParams::default()).unwrap().into_mask();
    check_topology(&m, &sk);
}

#[test]
fn deterministic() {
    let m = annulus();
    let a = synthetic_sketch(&m, &HeatParams::default()).unwrap();
    let b = synthetic_sketch(&m, &HeatParams::default()).unwrap();
    assert_eq!(a, b);
}

fn blob_strategy() -> impl Strategy<Value = MaskField> {
    prop::collection::vec((4usize..28, 4usize..28, 1usize..6, 1usize..6), 1..5).prop_map(|rects| {
        MaskField::from_fn(spec(32), |i, j| {
            rects.iter().any(|&(x, y, w, h)| i >= x && i < (x + w).min(31) && j >= y && j < (y + h).min(31))
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn skeleton_preserves_topology(m in blob_strategy()) {
        let sk = synthetic_sketch(&m, &HeatParams::default()).unwrap().into_mask();
        prop_assert!(sk.is_subset_of(&m));
        prop_assert_eq!(topology::components_8(&sk), topology::components_8(&m));
        prop_assert_eq!(topology::holes(&sk), topology::holes(&m));
        prop_assert!(topology::thinness_violation(&sk) < 0.01, "thinness {}", topology::thinness_violation(&sk));
    }
}

/// Brute-force Euclidean distance from each mask pixel to the nearest exterior pixel.
fn depth(m: &MaskField, i: usize, j: usize) -> f64 {
    let s = m.spec();
    let mut best = f64::INFINITY;
    for jj in -1..=s.ny as i64 {
        for ii in -1..=s.nx as i64 {
            if !m.get_signed(ii as isize, jj as isize) {
                let d = ((ii - i as i64).pow(2) + (jj - j as i64).pow(2)) as f64;
                best = best.min(d.sqrt());
            }
        }
    }
    best
}

#[test]
fn disk_is_coldest_at_its_deepest_point() {
    let s = spec(32);
    let disk = MaskField::from_fn(s, |i, j| {
        let (x, y) = (i as f64 - 15.5, j as f64 - 15.5);
        x * x + y * y <= 100.0
    });
    let heat = heat_map(&disk, &HeatParams::default()).unwrap();
    let mut coldest = (f64::INFINITY, 0, 0);
    let mut deepest = (0.0, 0, 0);
    for (i, j) in cells(&disk) {
        let (i, j) = (i as usize, j as usize);
        let t = heat.get(i, j);
        assert!(t > 0.0 && t <= 1.0);
        if t < coldest.0 {
            coldest = (t, i, j);
        }
        let d = depth(&disk, i, j);
        if d > deepest.0 {
            deepest = (d, i, j);
        }
    }
    let gap = ((coldest.1 as f64 - deepest.1 as f64).powi(2) + (coldest.2 as f64 - deepest.2 as f64).powi(2)).sqrt();
    assert!(gap <= 1.0 + 1e-12, "coldest {coldest:?} deepest {deepest:?}");
    for j in 0..s.ny {
        for i in 0..s.nx {
            if !disk.get(i, j) {
                assert_eq!(heat.get(i, j), 0.0);
            }
        }
    }
}

#[test]
fn single_pixel_is_contour() {
    let s = spec(8);
    let m = MaskField::from_fn(s, |i, j| i == 3 && j == 4);
    let heat = heat_map(&m, &HeatParams::default()).unwrap();
    assert_eq!(heat.get(3, 4), 1.0);
    assert_eq!(synthetic_sketch(&m, &HeatParams::default()).unwrap().into_mask(), m);
    assert!(heat_map(&MaskField::empty(s), &HeatParams::default()).is_err());
    assert!(synthetic_sketch(&MaskField::empty(s), &HeatParams::default()).is_err());
    assert!(HeatParams { conductivity: 0.3, ..Default::default() }.validate().is_err());
    assert!(HeatParams { iterations: Some(0), ..Default::default() }.validate().is_err());
}

#[test]
fn double_gyre_lcs_keeps_its_components() {
    use dualsmoke_core::ftle::{ftle_field, FtleParams, VelocitySequence};
    use dualsmoke_core::lcs::{extract_lcs, LcsParams};
    use dualsmoke_core::Vec2;
    use std::f64::consts::PI;
    let s = GridSpec::new(128, 64, 2.0 / 128.0).unwrap();
    let (a, eps, w) = (0.1, 0.25, 2.0 * PI / 10.0);
    let seq = VelocitySequence::from_fn(s, 151, 0.1, |p, t| {
        let e = eps * (w * t).sin();
        let f = e * p.x * p.x + (1.0 - 2.0 * e) * p.x;
        let dfdx = 2.0 * e * p.x + 1.0 - 2.0 * e;
        Vec2::new(-PI * a * (PI * f).sin() * (PI * p.y).cos(), PI * a * (PI * f).cos() * (PI * p.y).sin() * dfdx)
    })
    .unwrap();
    let ftle = ftle_field(&seq, 0.0, &FtleParams { t: 15.0, substep_dt: Some(0.1), ..Default::default() }).unwrap();
    let mask = extract_lcs(&ftle, &LcsParams::default()).unwrap().mask;
    let sk = synthetic_sketch(&mask, &HeatParams::default()).unwrap().into_mask();
    assert!(sk.is_subset_of(&mask));
    assert_eq!(topology::components_8(&sk), topology::components_8(&mask));
    assert!(topology::thinness_violation(&sk) < 0.01);
}

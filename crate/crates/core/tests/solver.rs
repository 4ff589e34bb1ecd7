use std::time::Instant;

use dualsmoke_core::solver::{
    advect_maccormack_with_bounds, advect_semi_lagrangian, project, step, AdvectionScheme, SimParams, SimState,
    TopBoundary,
};
use dualsmoke_core::{GridSpec, MaskField, ScalarField, VectorField, VelocityField};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn random_velocity(spec: GridSpec, rng: &mut ChaCha8Rng, scale: f64) -> VelocityField {
    let n = Normal::new(0.0, scale).unwrap();
    let u = (0..(spec.nx + 1) * spec.ny).map(|_| n.sample(rng)).collect();
    let v = (0..spec.nx * (spec.ny + 1)).map(|_| n.sample(rng)).collect();
    VelocityField::from_components(spec, u, v).unwrap()
}

/// Cell divergence straight from the face arrays.
fn divergence_oracle(vel: &VelocityField, i: usize, j: usize) -> f64 {
    let s = vel.spec();
    let (u, v) = (vel.u(), vel.v());
    let ur = u[j * (s.nx + 1) + i + 1];
    let ul = u[j * (s.nx + 1) + i];
    let vt = v[(j + 1) * s.nx + i];
    let vb = v[j * s.nx + i];
    (ur - ul + vt - vb) / s.dx
}

#[test]
fn projection_with_obstacle_block() {
    let spec = GridSpec::square(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut state = SimState::new(spec);
    state.vel = random_velocity(spec, &mut rng, 1.0);
    state.obstacles = MaskField::from_fn(spec, |i, j| (12..18).contains(&i) && (10..15).contains(&j));
    let start = Instant::now();
    let report = project(&mut state, &SimParams::default()).unwrap();
    let elapsed = start.elapsed();
    assert!(report.converged, "{report:?}");
    assert!(elapsed.as_secs_f64() < 1.0, "{elapsed:?}");
    let mut max_div: f64 = 0.0;
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            if !state.obstacles.get(i, j) {
                max_div = max_div.max(divergence_oracle(&state.vel, i, j).abs());
            }
        }
    }
    assert!(max_div <= 1e-4, "max divergence {max_div}");
    let (u, v) = (state.vel.u(), state.vel.v());
    for j in 0..spec.ny {
        for i in 0..spec.nx {
            if state.obstacles.get(i, j) {
                assert_eq!(u[j * (spec.nx + 1) + i], 0.0);
                assert_eq!(u[j * (spec.nx + 1) + i + 1], 0.0);
                assert_eq!(v[j * spec.nx + i], 0.0);
                assert_eq!(v[(j + 1) * spec.nx + i], 0.0);
            }
        }
    }
    // side and bottom walls carry no flow
    for j in 0..spec.ny {
        assert_eq!(u[j * (spec.nx + 1)], 0.0);
        assert_eq!(u[j * (spec.nx + 1) + spec.nx], 0.0);
    }
    for i in 0..spec.nx {
        assert_eq!(v[i], 0.0);
    }
}

#[test]
fn projection_is_idempotent() {
    let spec = GridSpec::square(24).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut state = SimState::new(spec);
    state.vel = random_velocity(spec, &mut rng, 0.5);
    project(&mut state, &SimParams::default()).unwrap();
    let once = state.vel.clone();
    project(&mut state, &SimParams::default()).unwrap();
    for (a, b) in state.vel.u().iter().zip(once.u()).chain(state.vel.v().iter().zip(once.v())) {
        assert!((a - b).abs() < 1e-4);
    }
}

#[test]
fn semi_lagrangian_never_exceeds_input_extrema() {
    let spec = GridSpec::square(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let start = Instant::now();
    let mut field = ScalarField::from_values(spec, (0..spec.cells()).map(|_| rng.random_range(-3.0..5.0)).collect()).unwrap();
    let (lo0, hi0) = (field.min(), field.max());
    for _ in 0..1000 {
        let vel = random_velocity(spec, &mut rng, 2.0);
        let dt = rng.random_range(0.01..1.0);
        let (lo, hi) = (field.min(), field.max());
        field = advect_semi_lagrangian(&field, &vel, dt);
        assert!(field.min() >= lo && field.max() <= hi);
    }
    assert!(field.min() >= lo0 && field.max() <= hi0);
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn maccormack_clamp_holds_for_every_sample() {
    let spec = GridSpec::square(32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let start = Instant::now();
    let mut field = ScalarField::from_values(spec, (0..spec.cells()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
    for _ in 0..1000 {
        let vel = random_velocity(spec, &mut rng, 2.0);
        let dt = rng.random_range(0.01..1.0);
        let (lo_in, hi_in) = (field.min(), field.max());
        let (out, bounds) = advect_maccormack_with_bounds(&field, &vel, dt);
        for (v, (lo, hi)) in out.values().iter().zip(&bounds) {
            assert!(v >= lo && v <= hi, "{v} outside [{lo}, {hi}]");
            assert!(*lo >= lo_in && *hi <= hi_in);
        }
        field = out;
    }
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

fn plume_state(n: usize) -> SimState {
    let spec = GridSpec::square(n).unwrap();
    let mut s = SimState::new(spec);
    let c = n as f64 / 2.0;
    s.sources = MaskField::from_fn(spec, |i, j| j < 3 && ((i as f64 + 0.5) - c).abs() <= 3.0);
    s
}

#[test]
fn buoyant_plume_rises_and_stays_physical() {
    let mut s = plume_state(48);
    let p = SimParams::default();
    let zero = VectorField::zeros(*s.spec());
    let mut last = 0.0;
    for n in 0..120 {
        let r = step(&mut s, &p, &zero).unwrap();
        assert!(r.converged());
        assert!(s.density.min() >= 0.0 && s.density.max() <= 1.0);
        assert!(s.vel.is_finite());
        if n % 20 == 19 {
            let y = s.density_centroid_y().unwrap();
            assert!(y > last, "centroid {y} after {last}");
            last = y;
        }
    }
    let above = s.vel.v().iter().cloned().fold(f64::MIN, f64::max);
    assert!(above > 0.0);
    assert_eq!(s.frame, 120);
    assert!((s.time - 12.0).abs() < 1e-9);
}

#[test]
fn simulation_is_deterministic() {
    let run = || {
        let mut s = plume_state(32);
        s.obstacles = MaskField::from_fn(*s.spec(), |i, j| (10..20).contains(&i) && j == 16);
        let p = SimParams::default();
        let zero = VectorField::zeros(*s.spec());
        for _ in 0..40 {
            step(&mut s, &p, &zero).unwrap();
        }
        s
    };
    assert_eq!(run(), run());
}

#[test]
fn obstacles_hold_no_smoke() {
    let mut s = plume_state(32);
    s.obstacles = MaskField::from_fn(*s.spec(), |i, j| (12..20).contains(&i) && (8..10).contains(&j));
    let p = SimParams::default();
    let zero = VectorField::zeros(*s.spec());
    for _ in 0..60 {
        step(&mut s, &p, &zero).unwrap();
    }
    for j in 8..10 {
        for i in 12..20 {
            assert_eq!(s.density.get(i, j), 0.0);
        }
    }
    assert!(s.density.sum() > 0.0);
}

#[test]
fn closed_top_and_semi_lagrangian_variant_run() {
    let mut s = plume_state(24);
    let p = SimParams { top: TopBoundary::Closed, advection: AdvectionScheme::SemiLagrangian, ..Default::default() };
    let zero = VectorField::zeros(*s.spec());
    for _ in 0..30 {
        assert!(step(&mut s, &p, &zero).unwrap().converged());
    }
    let top = s.spec().ny;
    for i in 0..s.spec().nx {
        assert_eq!(s.vel.v()[s.vel.v_idx(i, top)], 0.0);
    }
}

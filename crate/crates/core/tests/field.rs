use dualsmoke_core::field::{image, raster::Raster};
use dualsmoke_core::{GridSpec, MaskField, ScalarField, Vec2, VelocityField};
use proptest::prelude::*;

fn grid() -> impl Strategy<Value = GridSpec> {
    (4usize..40, 4usize..40, prop::sample::select(vec![1.0, 0.5, 0.25, 2.0]))
        .prop_map(|(nx, ny, dx)| GridSpec::new(nx, ny, dx).unwrap())
}

proptest! {
    #[test]
    fn clamp_is_idempotent(s in grid(), x in -100.0f64..100.0, y in -100.0f64..100.0) {
        let p = s.clamp(Vec2::new(x, y));
        prop_assert_eq!(s.clamp(p), p);
        prop_assert!(p.x >= 0.0 && p.x <= s.width() && p.y >= 0.0 && p.y <= s.height());
    }

    #[test]
    fn affine_velocity_is_reproduced_inside_the_hull(
        s in grid(),
        coef in prop::array::uniform6(-2.0f64..2.0),
        fx in 0.0f64..1.0,
        fy in 0.0f64..1.0,
    ) {
        let [a, b, c, d, e, f] = coef;
        let field = |p: Vec2| Vec2::new(a + b * p.x + c * p.y, d + e * p.x + f * p.y);
        let vel = VelocityField::from_fn(s, field);
        // the hull of both face lattices is [dx/2, W - dx/2] x [dx/2, H - dx/2]
        let p = Vec2::new(
            s.dx * 0.5 + fx * (s.width() - s.dx),
            s.dx * 0.5 + fy * (s.height() - s.dx),
        );
        let got = vel.sample(p);
        let want = field(p);
        prop_assert!((got - want).norm() <= 1e-10 * (1.0 + want.norm()), "{:?} vs {:?}", got, want);
    }

    #[test]
    fn affine_scalar_is_reproduced_inside_the_hull(
        s in grid(),
        coef in prop::array::uniform3(-3.0f64..3.0),
        fx in 0.0f64..1.0,
        fy in 0.0f64..1.0,
    ) {
        let [a, b, c] = coef;
        let field = ScalarField::from_fn(s, |p| a + b * p.x + c * p.y);
        let p = Vec2::new(s.dx * (0.5 + fx * (s.nx - 1) as f64), s.dx * (0.5 + fy * (s.ny - 1) as f64));
        prop_assert!((field.sample(p) - (a + b * p.x + c * p.y)).abs() <= 1e-10 * (1.0 + a.abs() + b.abs() * p.x + c.abs() * p.y));
    }

    #[test]
    fn raster_round_trip_is_bit_exact(s in grid(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..s.cells()).map(|_| (rng.random::<f32>() * 10.0 - 5.0) as f64).collect();
        let f = ScalarField::from_values(s, values).unwrap();
        let bytes = f.to_raster().unwrap().encode().unwrap();
        let back = ScalarField::from_raster(&Raster::decode(&bytes).unwrap()).unwrap();
        prop_assert_eq!(back.values(), f.values());
        prop_assert_eq!(back.spec(), f.spec());
    }

    #[test]
    fn mask_png_round_trip(s in grid(), bits in prop::collection::vec(any::<bool>(), 1600)) {
        let m = MaskField::from_cells(s, bits[..s.cells()].to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p8 = dir.path().join("m8.png");
        let p1 = dir.path().join("m1.png");
        let ps = dir.path().join("s.png");
        image::write_mask_png(&p8, &m).unwrap();
        image::write_mask_png_1bit(&p1, &m).unwrap();
        image::write_sketch_png(&ps, &m).unwrap();
        prop_assert_eq!(&image::read_mask_png(&p8, Some(s)).unwrap(), &m);
        prop_assert_eq!(&image::read_mask_png(&p1, Some(s)).unwrap(), &m);
        prop_assert_eq!(&image::read_sketch_png(&ps, Some(s)).unwrap(), &m);
    }
}

#[test]
fn velocity_raster_round_trip_through_centers() {
    let s = GridSpec::new(24, 16, 0.5).unwrap();
    let vel = VelocityField::from_fn(s, |p| Vec2::new(0.25 * p.y, -0.5 * p.x));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vf.dsfld");
    dualsmoke_core::field::raster::write_velocity(&path, &vel).unwrap();
    let back = dualsmoke_core::field::raster::read_velocity(&path).unwrap();
    assert_eq!(back.spec(), vel.spec());
    // interior faces of a linear field are exactly the center averages
    for j in 1..s.ny - 1 {
        for i in 1..s.nx {
            let k = vel.u_idx(i, j);
            assert!((back.u()[k] - vel.u()[k]).abs() < 1e-6);
        }
    }
    let (cu, cv) = vel.centered();
    let (bu, bv) = back.centered();
    for k in 0..s.cells() {
        assert!((cu[k] - bu[k]).abs() < 1e-5 && (cv[k] - bv[k]).abs() < 1e-5);
    }
}

#[test]
fn scalar_preview_reports_range_and_flips_rows() {
    let s = GridSpec::square(8).unwrap();
    let f = ScalarField::from_fn(s, |p| p.y);
    let (png, lo, hi) = image::encode_scalar_png(&f).unwrap();
    assert_eq!((lo, hi), (0.5, 7.5));
    let img = image::decode_gray(&png).unwrap();
    assert_eq!((img.width, img.height), (8, 8));
    // top image row is the highest grid row
    assert_eq!(img.pixels[0], 255);
    assert_eq!(img.pixels[(img.height - 1) * img.width], 0);
}

#[test]
fn divergence_of_linear_field() {
    let s = GridSpec::new(12, 10, 0.5).unwrap();
    let vel = VelocityField::from_fn(s, |p| Vec2::new(2.0 * p.x, -0.5 * p.y + p.x));
    for d in vel.divergence().values() {
        assert!((d - 1.5).abs() < 1e-12);
    }
}

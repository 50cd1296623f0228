use proptest::prelude::*;
use radfield_core::depthnav::{min_clearance, morph_open, opacity_mask, processed_disparity, BinaryMask, Clearance, Rect};
use radfield_core::scene::{generate_scene, trace_ground_truth, Primitive, SceneSpec, Shape};
use radfield_core::{CameraPose, ImageF, Intrinsics, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Opening by definition: the union of every `side × side` square that lies
/// inside both the image and the mask.
fn opening_oracle(m: &BinaryMask, side: usize) -> BinaryMask {
    let (w, h) = (m.width(), m.height());
    let mut out = BinaryMask::new(w, h);
    if side > w || side > h {
        return out;
    }
    for y0 in 0..=h - side {
        for x0 in 0..=w - side {
            if (y0..y0 + side).all(|y| (x0..x0 + side).all(|x| m.get(x, y))) {
                for y in y0..y0 + side {
                    for x in x0..x0 + side {
                        out.set(x, y, true);
                    }
                }
            }
        }
    }
    out
}

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    (1usize..=32, 1usize..=32, 0.3f64..0.9).prop_flat_map(|(w, h, p)| {
        prop::collection::vec(prop::bool::weighted(p), w * h).prop_map(move |bits| BinaryMask::from_fn(w, h, |x, y| bits[y * w + x]))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn opening_matches_set_definition(m in mask_strategy(), k in prop::sample::select(vec![3usize, 5]), n in 1usize..=2) {
        let side = n * (k - 1) + 1;
        prop_assert_eq!(morph_open(&m, k, n).unwrap(), opening_oracle(&m, side));
    }

    #[test]
    fn opening_is_idempotent_and_anti_extensive(m in mask_strategy(), n in 1usize..=2) {
        let once = morph_open(&m, 3, n).unwrap();
        prop_assert!(once.is_subset_of(&m));
        prop_assert_eq!(morph_open(&once, 3, n).unwrap(), once);
    }

    #[test]
    fn processed_support_within_mask(m in mask_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..m.width() * m.height()).map(|_| rng.random_range(0.0..2.0)).collect();
        let d = ImageF::from_vec(m.width(), m.height(), 1, data).unwrap();
        let p = processed_disparity(&d, &m).unwrap();
        for (i, &v) in p.data().iter().enumerate() {
            prop_assert!(v == 0.0 || m.bits()[i]);
        }
    }
}

#[test]
fn salt_noise_is_removed() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for j in 0..=50 {
        let blob = |x: usize, y: usize| (16..40).contains(&x) && (20..44).contains(&y);
        let mut m = BinaryMask::from_fn(64, 64, blob);
        let mut salt = Vec::new();
        while salt.len() < j {
            let (x, y) = (rng.random_range(0..64), rng.random_range(0..64));
            let isolated = (x as i64 - 1..=x as i64 + 1)
                .all(|a| (y as i64 - 1..=y as i64 + 1).all(|b| a < 0 || b < 0 || a >= 64 || b >= 64 || !m.get(a as usize, b as usize)));
            if isolated {
                m.set(x, y, true);
                salt.push((x, y));
            }
        }
        let open = morph_open(&m, 3, 1).unwrap();
        assert!(salt.iter().all(|&(x, y)| !open.get(x, y)), "j={j}");
        assert_eq!(open, BinaryMask::from_fn(64, 64, blob));
    }
}

#[test]
fn wall_clearance_matches_depth() {
    let spec = SceneSpec {
        seed: 0,
        resolution: [48; 3],
        bounds_center: [0.0; 3],
        bounds_half_extent: [1.0; 3],
        primitives: vec![Primitive {
            shape: Shape::Box { half_extent: [0.9, 0.9, 0.1] },
            center: [0.0, 0.0, 0.0],
            rotation: [0.0; 3],
            albedo: [0.5; 3],
            density: 200.0,
        }],
        texture_amplitude: 0.0,
        texture_cell: 0.125,
    };
    let scene = generate_scene(&spec).unwrap();
    let k = Intrinsics::from_fov_x(32, 32, 0.6);
    let eye = Vec3::new(0.0, 0.0, 2.5);
    let pose = CameraPose::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), k).unwrap();
    let maps = trace_ground_truth(&scene, &pose, 32, 32, 256).unwrap();
    let mask = morph_open(&opacity_mask(&maps.opacity, 0.5).unwrap(), 3, 2).unwrap();
    let d = processed_disparity(&maps.disparity, &mask).unwrap();
    let truth = 2.5 - 0.1;
    match min_clearance(&d, &Rect { x: 12, y: 12, width: 8, height: 8 }).unwrap() {
        Clearance::Distance(c) => assert!((c - truth).abs() / truth < 0.05, "clearance {c}"),
        Clearance::Unobstructed => panic!("wall not seen"),
    }
}

use proptest::prelude::*;
use radfield::dataset::{flip_camera_axes, read_dataset, read_transforms, write_dataset};
use radfield::io::{self, MapScale};
use radfield_core::camera::orbit_trajectory;
use radfield_core::scene::{generate_scene, SceneSpec};
use radfield_core::train::PosedImage;
use radfield_core::{Frame, ImageF, Intrinsics, Vec3};

proptest! {
    #[test]
    fn ppm_round_trips(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let data: Vec<u8> = (0..w * h * 3).map(|i| (seed.wrapping_mul(i as u64 + 7) >> 13) as u8).collect();
        let f = Frame::from_vec(w, h, 3, data).unwrap();
        prop_assert_eq!(io::decode_ppm(&io::encode_ppm(&f)).unwrap(), f);
    }

    #[test]
    fn pgm16_error_is_half_a_step(values in prop::collection::vec(0.0f64..50.0, 1..64)) {
        let n = values.len();
        let m = ImageF::from_vec(n, 1, 1, values).unwrap();
        let s = MapScale::fit(&m);
        let back = io::decode_pgm16(&io::encode_pgm16(&m, s), s).unwrap();
        for (a, b) in m.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= 0.5 / s.scale + 1e-12);
        }
    }
}

#[test]
fn truncated_pgm_is_rejected() {
    let m = ImageF::from_vec(3, 2, 1, vec![0.1; 6]).unwrap();
    let bytes = io::encode_pgm16(&m, MapScale { scale: 100.0 });
    assert!(io::decode_pgm16(&bytes[..bytes.len() - 1], MapScale { scale: 100.0 }).is_err());
}

#[test]
fn map_files_use_their_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.pgm");
    let m = ImageF::from_vec(2, 2, 1, vec![0.0, 1.5, 3.0, 0.75]).unwrap();
    io::write_map(&p, &m, MapScale::fit(&m)).unwrap();
    assert!(io::sidecar_path(&p).exists());
    let back = io::read_map(&p).unwrap();
    assert_eq!(back.data()[2], 3.0);
}

fn views(n: usize, with_time: bool) -> Vec<PosedImage> {
    let k = Intrinsics::from_fov_x(8, 6, 0.9);
    orbit_trajectory(Vec3::ZERO, 2.0, 1.0, n, k)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, pose)| {
            let image = Frame::from_vec(8, 6, 3, (0..144).map(|j| ((i * 31 + j * 7) % 256) as u8).collect()).unwrap().to_float();
            let alpha = Some(ImageF::from_vec(8, 6, 1, (0..48).map(|j| j as f64 / 47.0).collect()).unwrap());
            PosedImage { pose, image, alpha, time: if with_time { i as f64 / n as f64 } else { 0.0 } }
        })
        .collect()
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let vs = views(4, true);
    write_dataset(dir.path(), &vs).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), vs.len());
    for (a, b) in vs.iter().zip(&back) {
        assert_eq!(a.image, b.image);
        assert_eq!(a.time, b.time);
        for (ra, rb) in a.pose.matrix().iter().zip(b.pose.matrix()) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let (aa, ba) = (a.alpha.as_ref().unwrap(), b.alpha.as_ref().unwrap());
        assert!(aa.data().iter().zip(ba.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 65535.0 + 1e-12));
    }
}

#[test]
fn static_dataset_omits_time() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &views(2, false)).unwrap();
    let text = std::fs::read_to_string(dir.path().join("transforms.json")).unwrap();
    assert!(!text.contains("\"time\""));
}

#[test]
fn stored_matrices_follow_the_opengl_convention() {
    let dir = tempfile::tempdir().unwrap();
    let vs = views(3, false);
    write_dataset(dir.path(), &vs).unwrap();
    let t = read_transforms(dir.path()).unwrap();
    for (f, v) in t.frames.iter().zip(&vs) {
        let m = f.transform_matrix;
        let eye = v.pose.origin();
        let back = [m[0][2], m[1][2], m[2][2]];
        let up = [m[0][1], m[1][1], m[2][1]];
        // camera +z points away from the look-at target, +y has a world-up component
        assert!(back[0] * eye.x + back[1] * eye.y + back[2] * eye.z > 0.0);
        assert!(up[2] > 0.0);
        assert_eq!(flip_camera_axes(&m), *v.pose.matrix());
    }
    assert!((t.camera_angle_x - 0.9).abs() < 1e-12);
}

#[test]
fn out_of_range_time_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &views(2, true)).unwrap();
    let p = dir.path().join("transforms.json");
    let mut t: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
    t["frames"][1]["time"] = serde_json::json!(1.5);
    std::fs::write(&p, t.to_string()).unwrap();
    assert!(read_dataset(dir.path()).is_err());
}

#[test]
fn scene_files_are_deterministic_and_checked() {
    let spec = SceneSpec::standard(12);
    let a = io::encode_scene(&generate_scene(&spec).unwrap());
    let b = io::encode_scene(&generate_scene(&spec).unwrap());
    assert_eq!(a, b);
    assert!(io::decode_scene(&a).is_ok());
    let mut bad = a.clone();
    let last = bad.len() - 1;
    bad[last] ^= 0x40;
    assert!(io::decode_scene(&bad).is_err());
}

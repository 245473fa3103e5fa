use proptest::prelude::*;

use ringflow::geometry::{dot, icosphere, norm, normalize, Vec3};
use ringflow::reflectance::{eval_brdf, shade, BrdfSample, LightFalloff, ShadePoint};
use ringflow::renderer::{determinant, mat_mul, so3_exp, transpose, Camera};

fn unit() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, phi)| {
        let r = (1.0 - z * z).sqrt();
        [r * phi.cos(), r * phi.sin(), z]
    })
}

fn theta() -> impl Strategy<Value = BrdfSample> {
    (0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.05f64..0.95).prop_map(|(r, g, b, s, a)| BrdfSample {
        rho_rgb: [r, g, b],
        rho_spec: s,
        roughness: a,
    })
}

fn point(n: Vec3, i: Vec3, o: Vec3, d: f64) -> ShadePoint {
    ShadePoint {
        position: [0.0; 3],
        normal: n,
        to_light: i,
        to_camera: o,
        light_distance: d,
    }
}

/// Reflects `v` into the hemisphere around `n`, nudged off the horizon.
fn above(v: Vec3, n: Vec3) -> Vec3 {
    let c = dot(v, n);
    let v = if c < 0.0 { [v[0] - 2.0 * c * n[0], v[1] - 2.0 * c * n[1], v[2] - 2.0 * c * n[2]] } else { v };
    normalize([v[0] + 0.1 * n[0], v[1] + 0.1 * n[1], v[2] + 0.1 * n[2]])
}

proptest! {
    #[test]
    fn brdf_is_reciprocal(n in unit(), i in unit(), o in unit(), t in theta()) {
        let (i, o) = (above(i, n), above(o, n));
        let a = eval_brdf(&point(n, i, o, 1.0), &t).unwrap();
        let b = eval_brdf(&point(n, o, i, 1.0), &t).unwrap();
        for c in 0..3 {
            prop_assert!((a[c] - b[c]).abs() <= 1e-12 * a[c].abs().max(1.0));
        }
    }

    #[test]
    fn shading_is_non_negative_and_bounded_below_by_diffuse(
        n in unit(), i in unit(), o in unit(), t in theta(), d in 0.2f64..5.0
    ) {
        let s = shade(&point(n, i, o, d), &t, LightFalloff::Near);
        let cos = dot(n, i).max(0.0);
        for c in 0..3 {
            prop_assert!(s[c] >= 0.0);
            prop_assert!(s[c] >= cos * t.rho_rgb[c] / (d * d) * (1.0 - 1e-12));
        }
    }

    #[test]
    fn exponential_map_is_a_proper_rotation(w in prop::array::uniform3(-3.0f64..3.0)) {
        let r = so3_exp(w);
        let rrt = mat_mul(&r, &transpose(&r));
        for (a, row) in rrt.iter().enumerate() {
            for (b, &x) in row.iter().enumerate() {
                let expected = if a == b { 1.0 } else { 0.0 };
                prop_assert!((x - expected).abs() < 1e-12);
            }
        }
        prop_assert!((determinant(&r) - 1.0).abs() < 1e-12);
        // the axis is fixed
        let axis = ringflow::renderer::mat_vec(&r, w);
        prop_assert!((0..3).all(|k| (axis[k] - w[k]).abs() < 1e-9));
    }

    #[test]
    fn look_at_cameras_round_trip_through_matrices(eye in unit(), dist in 1.5f64..6.0) {
        let eye = eye.map(|c| c * dist);
        let cam = Camera::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], 50.0, 50.0, 32, 32);
        prop_assert!(cam.validate().is_ok());
        let back = Camera::from_camera_to_world(&cam.camera_to_world(), 50.0, 50.0, cam.cx, cam.cy, 32, 32);
        prop_assert!(norm([back.center()[0] - eye[0], back.center()[1] - eye[1], back.center()[2] - eye[2]]) < 1e-12);
        let p = cam.project([0.0; 3], 0.1);
        prop_assert!((p.pixel[0] - 16.0).abs() < 1e-9 && (p.pixel[1] - 16.0).abs() < 1e-9);
        prop_assert!((p.depth - dist).abs() < 1e-9);
    }

    #[test]
    fn rotated_icospheres_stay_closed_unit_spheres(level in 0u32..4, seed in any::<u64>()) {
        let m = icosphere(level, Some(seed)).unwrap();
        prop_assert_eq!(m.euler_characteristic(), 2);
        prop_assert!(m.check_watertight().is_ok());
        prop_assert!(m.vertices.iter().all(|v| (norm(*v) - 1.0).abs() < 1e-12));
        for f in 0..m.faces.len() {
            let c = m.face_vertices(f);
            let centroid = [0, 1, 2].map(|k| c[0][k] + c[1][k] + c[2][k]);
            prop_assert!(dot(m.face_cross(f), centroid) > 0.0);
        }
    }
}

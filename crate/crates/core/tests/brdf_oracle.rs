//! Scalar reference for the reflectance model, written independently of the
//! library: the masking term is evaluated through the Smith Λ functions and
//! the lobe through the textbook `D·G / (π (n·i)(n·o))` quotient.

use ringflow::geometry::normalize;
use ringflow::reflectance::{eval_brdf, BrdfSample, ShadePoint};

fn reference(n: [f64; 3], i: [f64; 3], o: [f64; 3], t: [f64; 5]) -> [f64; 3] {
    let d = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let alpha = t[4];
    let h = {
        let s = [i[0] + o[0], i[1] + o[1], i[2] + o[2]];
        let l = d(s, s).sqrt();
        [s[0] / l, s[1] / l, s[2] / l]
    };
    let cos_h = d(n, h);
    let tan2_h = (1.0 - cos_h * cos_h) / (cos_h * cos_h);
    let distribution =
        1.0 / (std::f64::consts::PI * alpha * alpha * cos_h.powi(4) * (1.0 + tan2_h / (alpha * alpha)).powi(2));
    let lambda = |c: f64| {
        let tan2 = (1.0 - c * c) / (c * c);
        (-1.0 + (1.0 + alpha * alpha * tan2).sqrt()) / 2.0
    };
    let (ci, co) = (d(n, i), d(n, o));
    let masking = 1.0 / (1.0 + lambda(ci) + lambda(co));
    let spec = t[3] * distribution * masking / (std::f64::consts::PI * ci * co);
    [t[0] + spec, t[1] + spec, t[2] + spec]
}

#[test]
fn normal_incidence_matches_reference() {
    let z = [0.0, 0.0, 1.0];
    let t = [0.0, 0.0, 0.0, 1.0, 0.5];
    let p = ShadePoint {
        position: [0.0; 3],
        normal: z,
        to_light: z,
        to_camera: z,
        light_distance: 1.0,
    };
    let lib = eval_brdf(&p, &BrdfSample::from_array(t)).unwrap();
    let oracle = reference(z, z, z, t);
    for c in 0..3 {
        assert!((lib[c] - oracle[c]).abs() < 1e-9);
    }
}

#[test]
fn oblique_configurations_match_reference() {
    let cases = [
        ([0.0, 0.0, 1.0], [0.3, 0.1, 1.0], [-0.2, 0.4, 1.0], [0.2, 0.4, 0.6, 0.8, 0.35]),
        ([0.1, -0.2, 1.0], [1.0, 0.0, 0.4], [0.0, 1.0, 0.3], [0.9, 0.1, 0.5, 0.3, 0.75]),
        ([0.5, 0.5, 0.7], [0.2, 0.9, 0.9], [0.8, 0.1, 0.6], [0.0, 0.0, 0.0, 1.0, 0.12]),
    ];
    for (n, i, o, t) in cases {
        let (n, i, o) = (normalize(n), normalize(i), normalize(o));
        let p = ShadePoint {
            position: [0.0; 3],
            normal: n,
            to_light: i,
            to_camera: o,
            light_distance: 1.0,
        };
        let lib = eval_brdf(&p, &BrdfSample::from_array(t)).unwrap();
        let oracle = reference(n, i, o, t);
        for c in 0..3 {
            assert!((lib[c] - oracle[c]).abs() < 1e-9 * oracle[c].max(1.0), "{lib:?} vs {oracle:?}");
        }
    }
}

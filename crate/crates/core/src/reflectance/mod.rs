//! Cook-Torrance reflectance with a GGX distribution and height-correlated
//! Smith masking, plus the point-light shading equation.
//!
//! With `α = r`, `a² = α²`, `c_v = n·v`:
//!
//! ```text
//! D    = a² / (π ((n·h)² (a² − 1) + 1)²)
//! S_v  = sqrt(c_v² (1 − a²) + a²)
//! spec = ρ^γ · D · 2 / (π (c_o S_i + c_i S_o))
//! B    = ρ_rgb + spec
//! I    = max(0, n·i) · B / d²
//! ```
//!
//! `spec` equals `ρ^γ D G / (π c_i c_o)` for the height-correlated Smith
//! term `G`; the Fresnel factor is a constant absorbed into `ρ^γ`.

mod kernel;

pub use kernel::{shade_local, shade_local_vjp, shade_var, LocalShadeGrad, PointLight};

use std::f64::consts::PI;

use thiserror::Error;

use crate::geometry::{dot, normalize, Vec3};

/// Smallest accepted specular denominator.
pub const DENOM_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReflectanceError {
    #[error("specular denominator {value:e} below {DENOM_EPS:e}: n·i and n·o must both be positive")]
    GrazingConfiguration { value: f64 },
}

/// Five reflectance parameters: diffuse RGB, specular albedo, roughness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrdfSample {
    pub rho_rgb: [f64; 3],
    pub rho_spec: f64,
    pub roughness: f64,
}

impl BrdfSample {
    pub fn from_array(t: [f64; 5]) -> Self {
        Self {
            rho_rgb: [t[0], t[1], t[2]],
            rho_spec: t[3],
            roughness: t[4],
        }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.rho_rgb[0], self.rho_rgb[1], self.rho_rgb[2], self.rho_spec, self.roughness]
    }

    pub fn lambertian(rho_rgb: [f64; 3]) -> Self {
        Self {
            rho_rgb,
            rho_spec: 0.0,
            roughness: 0.5,
        }
    }
}

/// Local shading geometry; all direction vectors unit length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShadePoint {
    pub position: Vec3,
    pub normal: Vec3,
    pub to_light: Vec3,
    pub to_camera: Vec3,
    pub light_distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LightFalloff {
    /// Inverse-square falloff with the given distance.
    Near,
    /// Parallel light: distance fixed to 1.
    Distant,
}

pub fn ggx_distribution(n_dot_h: f64, a2: f64) -> f64 {
    let den = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (PI * den * den)
}

/// `c_o S_i + c_i S_o`, the symmetric denominator of the specular lobe.
pub fn smith_denominator(n_dot_i: f64, n_dot_o: f64, a2: f64) -> f64 {
    let s_i = (n_dot_i * n_dot_i * (1.0 - a2) + a2).sqrt();
    let s_o = (n_dot_o * n_dot_o * (1.0 - a2) + a2).sqrt();
    n_dot_o * s_i + n_dot_i * s_o
}

/// Reflectance for a configuration where light and camera both lie above
/// the surface.
pub fn eval_brdf(p: &ShadePoint, theta: &BrdfSample) -> Result<[f64; 3], ReflectanceError> {
    let ni = dot(p.normal, p.to_light);
    let no = dot(p.normal, p.to_camera);
    if ni * no < DENOM_EPS {
        return Err(ReflectanceError::GrazingConfiguration { value: ni * no });
    }
    let h = normalize([
        p.to_light[0] + p.to_camera[0],
        p.to_light[1] + p.to_camera[1],
        p.to_light[2] + p.to_camera[2],
    ]);
    let a2 = theta.roughness * theta.roughness;
    let q = smith_denominator(ni, no, a2);
    let spec = theta.rho_spec * ggx_distribution(dot(p.normal, h), a2) * 2.0 / (PI * q);
    Ok(theta.rho_rgb.map(|c| c + spec))
}

/// Radiance leaving `p` toward the camera. Back-facing light gives exactly 0;
/// grazing views use the guarded specular term.
pub fn shade(p: &ShadePoint, theta: &BrdfSample, falloff: LightFalloff) -> [f64; 3] {
    let d2 = match falloff {
        LightFalloff::Near => p.light_distance * p.light_distance,
        LightFalloff::Distant => 1.0,
    };
    kernel::shade_core(p.normal, p.to_light, p.to_camera, d2, &theta.to_array()).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
        loop {
            let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let l = dot(v, v);
            if l > 1e-4 && l <= 1.0 {
                return normalize(v);
            }
        }
    }

    fn random_hemisphere<R: Rng>(rng: &mut R, n: Vec3) -> Vec3 {
        loop {
            let v = random_unit(rng);
            if dot(v, n) > 0.05 {
                return v;
            }
        }
    }

    fn random_theta<R: Rng>(rng: &mut R) -> BrdfSample {
        BrdfSample {
            rho_rgb: [rng.random(), rng.random(), rng.random()],
            rho_spec: rng.random(),
            roughness: rng.random_range(0.05..0.95),
        }
    }

    const Z: Vec3 = [0.0, 0.0, 1.0];

    fn point(n: Vec3, i: Vec3, o: Vec3, d: f64) -> ShadePoint {
        ShadePoint {
            position: [0.0; 3],
            normal: n,
            to_light: i,
            to_camera: o,
            light_distance: d,
        }
    }

    #[test]
    fn reciprocity_over_random_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = random_unit(&mut rng);
            let i = random_hemisphere(&mut rng, n);
            let o = random_hemisphere(&mut rng, n);
            let t = random_theta(&mut rng);
            let a = eval_brdf(&point(n, i, o, 1.0), &t).unwrap();
            let b = eval_brdf(&point(n, o, i, 1.0), &t).unwrap();
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 1e-12, "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn no_specular_albedo_is_lambertian() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = random_unit(&mut rng);
            let (i, o) = (random_hemisphere(&mut rng, n), random_hemisphere(&mut rng, n));
            let mut t = random_theta(&mut rng);
            t.rho_spec = 0.0;
            assert_eq!(eval_brdf(&point(n, i, o, 1.0), &t).unwrap(), t.rho_rgb);
        }
    }

    #[test]
    fn normal_incidence_value() {
        let t = BrdfSample {
            rho_rgb: [0.0; 3],
            rho_spec: 1.0,
            roughness: 0.5,
        };
        let b = eval_brdf(&point(Z, Z, Z, 1.0), &t).unwrap();
        let expected = 4.0 / (PI * PI);
        assert!(b.iter().all(|&x| (x - expected).abs() < 1e-12));
    }

    #[test]
    fn grazing_configuration_is_rejected() {
        let t = BrdfSample::lambertian([0.5; 3]);
        let err = eval_brdf(&point(Z, [1.0, 0.0, 0.0], Z, 1.0), &t).unwrap_err();
        assert!(matches!(err, ReflectanceError::GrazingConfiguration { .. }));
    }

    #[test]
    fn backfacing_light_gives_black() {
        let t = BrdfSample::lambertian([0.5; 3]);
        let p = point(Z, normalize([0.3, 0.0, -1.0]), Z, 1.0);
        assert_eq!(shade(&p, &t, LightFalloff::Near), [0.0; 3]);
    }

    #[test]
    fn inverse_square_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = random_unit(&mut rng);
            let (i, o) = (random_hemisphere(&mut rng, n), random_hemisphere(&mut rng, n));
            let mut t = random_theta(&mut rng);
            t.rho_spec = 0.0;
            let d = rng.random_range(0.5..3.0);
            let near = shade(&point(n, i, o, d), &t, LightFalloff::Near);
            let far = shade(&point(n, i, o, 2.0 * d), &t, LightFalloff::Near);
            for c in 0..3 {
                assert_eq!(far[c], near[c] / 4.0);
            }
        }
    }

    #[test]
    fn distant_unit_cosine_is_albedo() {
        let t = BrdfSample::lambertian([0.6, 0.2, 0.1]);
        assert_eq!(shade(&point(Z, Z, Z, 7.0), &t, LightFalloff::Distant), [0.6, 0.2, 0.1]);
    }

    #[test]
    fn shading_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let p = point(random_unit(&mut rng), random_unit(&mut rng), random_unit(&mut rng), rng.random_range(0.1..4.0));
            let c = shade(&p, &random_theta(&mut rng), LightFalloff::Near);
            assert!(c.iter().all(|&x| x >= 0.0 && x.is_finite()));
        }
    }

    #[test]
    fn mirror_peak_decreases_with_roughness() {
        let i = normalize([0.4, 0.0, 1.0]);
        let o = normalize([-0.4, 0.0, 1.0]);
        let peaks: Vec<f64> = (1..=9)
            .map(|k| {
                let t = BrdfSample {
                    rho_rgb: [0.0; 3],
                    rho_spec: 1.0,
                    roughness: k as f64 / 10.0,
                };
                eval_brdf(&point(Z, i, o, 1.0), &t).unwrap()[0]
            })
            .collect();
        assert!(peaks.windows(2).all(|w| w[1] <= w[0]), "{peaks:?}");
    }
}

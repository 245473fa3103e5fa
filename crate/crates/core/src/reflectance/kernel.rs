//! Guarded shading kernel and its hand-written adjoint, used per fragment
//! by the soft rasterizer.

use std::f64::consts::PI;

use crate::autodiff::{AdError, BackwardArgs, Tensor, Var};
use crate::geometry::{dot, norm, scale, sub, Vec3};

use super::DENOM_EPS;

/// Light in camera coordinates (camera at the origin).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PointLight {
    /// Point light at a position; inverse-square falloff.
    Point(Vec3),
    /// Parallel light arriving from a unit direction (pointing toward the
    /// light); no falloff.
    Directional(Vec3),
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct CoreCache {
    lit: bool,
    specular: bool,
    ni: f64,
    no: f64,
    co: f64,
    d2: f64,
    f: f64,
    h: Vec3,
    h_len: f64,
    nh: f64,
    a: f64,
    a2: f64,
    den: f64,
    dist: f64,
    s_i: f64,
    s_o: f64,
    q: f64,
    p: f64,
    spec: f64,
    b: [f64; 3],
}

pub(crate) struct CoreGrad {
    pub n: Vec3,
    pub i: Vec3,
    pub o: Vec3,
    pub d2: f64,
    pub theta: [f64; 5],
}

/// `max(0, n·i)·B/d²` with the view cosine clamped at 0, the specular
/// denominator floored at [`DENOM_EPS`] and the lobe switched off when the
/// half vector is undefined or below the surface.
pub(crate) fn shade_core(n: Vec3, i: Vec3, o: Vec3, d2: f64, theta: &[f64; 5]) -> ([f64; 3], CoreCache) {
    let mut c = CoreCache {
        ni: dot(n, i),
        d2,
        ..CoreCache::default()
    };
    if c.ni <= 0.0 || d2 <= 0.0 {
        return ([0.0; 3], c);
    }
    c.lit = true;
    c.no = dot(n, o);
    c.co = c.no.max(0.0);
    c.f = c.ni / d2;
    let hr = [i[0] + o[0], i[1] + o[1], i[2] + o[2]];
    c.h_len = norm(hr);
    if c.h_len > 1e-12 {
        c.h = scale(hr, 1.0 / c.h_len);
        c.nh = dot(n, c.h);
        if c.nh > 0.0 {
            c.specular = true;
            c.a = theta[4];
            c.a2 = c.a * c.a;
            c.den = c.nh * c.nh * (c.a2 - 1.0) + 1.0;
            c.dist = c.a2 / (PI * c.den * c.den);
            c.s_i = (c.ni * c.ni * (1.0 - c.a2) + c.a2).sqrt();
            c.s_o = (c.co * c.co * (1.0 - c.a2) + c.a2).sqrt();
            c.q = c.co * c.s_i + c.ni * c.s_o;
            c.p = 2.0 / (PI * c.q.max(DENOM_EPS));
            c.spec = theta[3] * c.dist * c.p;
        }
    }
    c.b = [theta[0] + c.spec, theta[1] + c.spec, theta[2] + c.spec];
    (c.b.map(|b| c.f * b), c)
}

pub(crate) fn shade_core_vjp(c: &CoreCache, n: Vec3, i: Vec3, o: Vec3, theta: &[f64; 5], g: [f64; 3]) -> CoreGrad {
    let mut out = CoreGrad {
        n: [0.0; 3],
        i: [0.0; 3],
        o: [0.0; 3],
        d2: 0.0,
        theta: [0.0; 5],
    };
    if !c.lit {
        return out;
    }
    let g_f = g[0] * c.b[0] + g[1] * c.b[1] + g[2] * c.b[2];
    for k in 0..3 {
        out.theta[k] = g[k] * c.f;
    }
    let g_spec = c.f * (g[0] + g[1] + g[2]);
    let mut g_ni = g_f / c.d2;
    out.d2 = -g_f * c.f / c.d2;
    let mut g_no = 0.0;
    if c.specular {
        out.theta[3] = g_spec * c.dist * c.p;
        let g_d = g_spec * theta[3] * c.p;
        let g_p = g_spec * theta[3] * c.dist;
        let g_q = if c.q > DENOM_EPS { -g_p * c.p / c.q } else { 0.0 };
        let den3 = PI * c.den * c.den * c.den;
        let dd_da2 = 1.0 / (PI * c.den * c.den) - 2.0 * c.a2 * c.nh * c.nh / den3;
        let dd_dnh = -4.0 * c.a2 * c.nh * (c.a2 - 1.0) / den3;
        let mut g_a2 = g_d * dd_da2;
        let g_nh = g_d * dd_dnh;
        let dsi_dni = c.ni * (1.0 - c.a2) / c.s_i;
        let dsi_da2 = (1.0 - c.ni * c.ni) / (2.0 * c.s_i);
        let dso_dco = c.co * (1.0 - c.a2) / c.s_o;
        let dso_da2 = (1.0 - c.co * c.co) / (2.0 * c.s_o);
        let g_co = g_q * (c.s_i + c.ni * dso_dco);
        g_ni += g_q * (c.co * dsi_dni + c.s_o);
        g_a2 += g_q * (c.co * dsi_da2 + c.ni * dso_da2);
        if c.no > 0.0 {
            g_no = g_co;
        }
        out.theta[4] = g_a2 * 2.0 * c.a;
        // n·h with h = (i+o)/|i+o|
        let g_h = scale(n, g_nh);
        let hg = dot(c.h, g_h);
        let g_hr = scale(sub(g_h, scale(c.h, hg)), 1.0 / c.h_len);
        for k in 0..3 {
            out.n[k] += g_nh * c.h[k];
            out.i[k] += g_hr[k];
            out.o[k] += g_hr[k];
        }
    }
    for k in 0..3 {
        out.n[k] += g_ni * i[k] + g_no * o[k];
        out.i[k] += g_ni * n[k];
        out.o[k] += g_no * n[k];
    }
    out
}

/// Gradient of [`shade_local`] with respect to each of its inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalShadeGrad {
    pub normal: Vec3,
    pub position: Vec3,
    pub light: Vec3,
    pub theta: [f64; 5],
}

/// Gradient through `v ↦ v/|v|`.
fn unit_vjp(u: Vec3, len: f64, g: Vec3) -> Vec3 {
    scale(sub(g, scale(u, dot(u, g))), 1.0 / len)
}

struct LocalGeom {
    n: Vec3,
    n_len: f64,
    o: Vec3,
    x_len: f64,
    i: Vec3,
    l_len: f64,
    lvec: Vec3,
    d2: f64,
}

fn local_geometry(normal: Vec3, position: Vec3, light: &PointLight) -> Option<LocalGeom> {
    let n_len = norm(normal);
    let x_len = norm(position);
    if n_len == 0.0 || x_len == 0.0 {
        return None;
    }
    let (i, l_len, lvec, d2) = match *light {
        PointLight::Point(l) => {
            let lvec = sub(l, position);
            let d2 = dot(lvec, lvec);
            if d2 == 0.0 {
                return None;
            }
            let l_len = d2.sqrt();
            (scale(lvec, 1.0 / l_len), l_len, lvec, d2)
        }
        PointLight::Directional(dir) => (dir, 1.0, dir, 1.0),
    };
    Some(LocalGeom {
        n: scale(normal, 1.0 / n_len),
        n_len,
        o: scale(position, -1.0 / x_len),
        x_len,
        i,
        l_len,
        lvec,
        d2,
    })
}

/// Shades a camera-space surface point seen from the origin. `normal` need
/// not be unit length; it is normalized here.
pub fn shade_local(normal: Vec3, position: Vec3, light: &PointLight, theta: &[f64; 5]) -> [f64; 3] {
    match local_geometry(normal, position, light) {
        Some(g) => shade_core(g.n, g.i, g.o, g.d2, theta).0,
        None => [0.0; 3],
    }
}

/// Reverse-mode derivative of [`shade_local`] for an upstream gradient `g`.
pub fn shade_local_vjp(normal: Vec3, position: Vec3, light: &PointLight, theta: &[f64; 5], g: [f64; 3]) -> LocalShadeGrad {
    let mut out = LocalShadeGrad::default();
    let Some(geo) = local_geometry(normal, position, light) else {
        return out;
    };
    let (_, cache) = shade_core(geo.n, geo.i, geo.o, geo.d2, theta);
    let core = shade_core_vjp(&cache, geo.n, geo.i, geo.o, theta, g);
    out.theta = core.theta;
    out.normal = unit_vjp(geo.n, geo.n_len, core.n);
    // o = -x/|x|
    let g_x_from_o = unit_vjp(geo.o, geo.x_len, core.o);
    for k in 0..3 {
        out.position[k] -= g_x_from_o[k];
    }
    if let PointLight::Point(_) = light {
        let g_l = unit_vjp(geo.i, geo.l_len, core.i);
        for k in 0..3 {
            let g_lvec = g_l[k] + core.d2 * 2.0 * geo.lvec[k];
            out.light[k] = g_lvec;
            out.position[k] -= g_lvec;
        }
    } else {
        out.light = core.i;
    }
    out
}

fn vec3_of(t: &Tensor, op: &'static str) -> Result<Vec3, AdError> {
    if t.len() != 3 {
        return Err(AdError::ShapeMismatch {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![3],
        });
    }
    Ok([t.data()[0], t.data()[1], t.data()[2]])
}

/// Taped shading of one point: `normal`, `position` and `light` are
/// 3-vectors, `theta` a 5-vector; `directional` selects the light kind.
pub fn shade_var<'t>(
    normal: Var<'t>,
    position: Var<'t>,
    light: Var<'t>,
    theta: Var<'t>,
    directional: bool,
) -> Result<Var<'t>, AdError> {
    let n = vec3_of(&normal.value(), "shade")?;
    let x = vec3_of(&position.value(), "shade")?;
    let l = vec3_of(&light.value(), "shade")?;
    let tv = theta.value();
    if tv.len() != 5 {
        return Err(AdError::ShapeMismatch {
            op: "shade",
            lhs: tv.shape().to_vec(),
            rhs: vec![5],
        });
    }
    let t: [f64; 5] = tv.data().try_into().expect("length checked");
    let pl = if directional { PointLight::Directional(l) } else { PointLight::Point(l) };
    let value = Tensor::vector(shade_local(n, x, &pl, &t).to_vec());
    Ok(normal
        .tape()
        .custom("shade", &[normal, position, light, theta], value, move |args: &BackwardArgs<'_>| {
            let g = args.grad.data();
            let gr = shade_local_vjp(n, x, &pl, &t, [g[0], g[1], g[2]]);
            vec![
                Some(Tensor::vector(gr.normal.to_vec())),
                Some(Tensor::vector(gr.position.to_vec())),
                Some(Tensor::vector(gr.light.to_vec())),
                Some(Tensor::vector(gr.theta.to_vec())),
            ]
        }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Packs (normal, position, light, theta) into one 14-vector.
    fn run<'t>(v: Var<'t>, directional: bool) -> Result<Var<'t>, AdError> {
        let w = v.tape().constant(Tensor::vector(vec![0.7, -0.4, 1.1]));
        let c = shade_var(v.slice(0, 0, 3)?, v.slice(0, 3, 6)?, v.slice(0, 6, 9)?, v.slice(0, 9, 14)?, directional)?;
        c.dot(w)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut checked = 0;
        while checked < 200 {
            // surface point in front of the camera, facing it, light near the camera
            let x = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(1.5..3.0)];
            let n = [rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), -1.0];
            let l = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5)];
            let theta = [rng.random(), rng.random(), rng.random(), rng.random(), rng.random_range(0.1..0.9)];
            let directional = checked % 4 == 3;
            let l = if directional { crate::geometry::normalize([l[0], l[1], -1.0]) } else { l };
            // stay clear of the max(0, ·) kinks
            let geo = local_geometry(n, x, &if directional { PointLight::Directional(l) } else { PointLight::Point(l) }).unwrap();
            if dot(geo.n, geo.i) < 0.05 || dot(geo.n, geo.o) < 0.05 {
                continue;
            }
            let mut data = Vec::new();
            data.extend_from_slice(&n);
            data.extend_from_slice(&x);
            data.extend_from_slice(&l);
            data.extend_from_slice(&theta);
            let input = Tensor::vector(data);
            let cfg = GradCheckConfig {
                floor: 1e-5,
                ..GradCheckConfig::with_tol(1e-4)
            };
            let r = grad_check(|_, v| run(v, directional), &input, &cfg).unwrap();
            assert!(r.passed(), "{:?}", r.failures);
            checked += 1;
        }
    }

    #[test]
    fn local_shading_matches_point_form() {
        let x = [0.1, -0.2, 2.0];
        let n = crate::geometry::normalize([0.2, 0.1, -1.0]);
        let l = [0.3, 0.3, 0.0];
        let theta = [0.4, 0.5, 0.6, 0.7, 0.3];
        let lvec = sub(l, x);
        let d = norm(lvec);
        let p = super::super::ShadePoint {
            position: x,
            normal: n,
            to_light: scale(lvec, 1.0 / d),
            to_camera: crate::geometry::normalize(scale(x, -1.0)),
            light_distance: d,
        };
        let a = shade_local(n, x, &PointLight::Point(l), &theta);
        let b = super::super::shade(&p, &super::super::BrdfSample::from_array(theta), super::super::LightFalloff::Near);
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-14);
        }
    }
}

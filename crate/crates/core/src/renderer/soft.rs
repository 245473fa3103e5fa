//! Soft rasterization.
//!
//! For pixel center `p` and triangle `j` (screen scale `s = 2/max(W, H)`):
//!
//! ```text
//! d²_j   = s²·dist²(p, projected triangle j)       (pixels → normalized units)
//! D_j    = sigmoid(±d²_j / σ)                      (+ inside, − outside)
//! λ'_j   = perspective-correct barycentrics        (closest-edge point outside)
//! z_j    = 1 / Σ_k λ_k/Z_k,   zn_j = (far − z_j)/(far − near)
//! C_j    = shade(interpolated normal, position, θ)
//! e_j    = D_j·exp((zn_j − max_k zn_k)/γ)
//! S      = 1 − Π_j (1 − D_j)
//! I      = S·Σ_j e_j C_j / Σ_j e_j + (1 − S)·bg
//! ```
//!
//! Triangles are visited in a canonical order (each face rotated so its
//! smallest vertex index comes first, then sorted), so the result does not
//! depend on the order faces are submitted in.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{BackwardArgs, Tensor, Var};
use crate::exec;
use crate::reflectance::{shade_local, shade_local_vjp, PointLight};

use super::{Camera, RenderError};

/// Pixel rows per parallel work item; also the binning tile size.
const TILE: usize = 8;
/// Aggregation weights below `exp(-70)` relative to the front are dropped.
const MIN_EXPONENT: f64 = -70.0;
/// Projected triangles with smaller pixel area are treated as edges only.
const SCREEN_AREA_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftRasterConfig {
    /// Coverage sharpness in normalized screen units squared.
    pub sigma: f64,
    /// Depth-aggregation temperature on the normalized depth `zn ∈ [0, 1]`.
    pub gamma: f64,
    pub background: [f64; 3],
    pub near: f64,
    pub far: f64,
    /// Coverage below this is treated as exactly zero.
    pub coverage_cutoff: f64,
}

impl Default for SoftRasterConfig {
    fn default() -> Self {
        Self {
            sigma: 1e-4,
            gamma: 1e-4,
            background: [0.0; 3],
            near: 0.1,
            far: 10.0,
            coverage_cutoff: 1e-12,
        }
    }
}

impl SoftRasterConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: &str| Err(RenderError::BadConfig(m.to_string()));
        if !(self.sigma > 0.0) || !(self.gamma > 0.0) {
            return bad("sigma and gamma must be positive");
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return bad("clip planes need 0 < near < far");
        }
        if !(self.coverage_cutoff > 0.0 && self.coverage_cutoff < 0.5) {
            return bad("coverage cutoff must lie in (0, 0.5)");
        }
        if !self.background.iter().all(|c| c.is_finite()) {
            return bad("background must be finite");
        }
        Ok(())
    }

    /// Largest normalized distance outside a triangle with coverage above
    /// the cutoff.
    fn margin(&self) -> f64 {
        (self.sigma * (1.0 / self.coverage_cutoff - 1.0).ln()).sqrt()
    }
}

/// Pinhole intrinsics and resolution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl From<&Camera> for Intrinsics {
    fn from(c: &Camera) -> Self {
        Self {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
        }
    }
}

impl Intrinsics {
    fn screen_scale(&self) -> f64 {
        2.0 / self.width.max(self.height) as f64
    }
}

/// Camera-space scene data, flat row-major.
struct SceneData<'a> {
    verts: &'a [f64],
    normals: &'a [f64],
    theta: &'a [f64],
    light: PointLight,
}

impl SceneData<'_> {
    fn vert(&self, i: usize) -> [f64; 3] {
        [self.verts[3 * i], self.verts[3 * i + 1], self.verts[3 * i + 2]]
    }

    fn normal(&self, i: usize) -> [f64; 3] {
        [self.normals[3 * i], self.normals[3 * i + 1], self.normals[3 * i + 2]]
    }

    fn theta(&self, i: usize) -> [f64; 5] {
        self.theta[5 * i..5 * i + 5].try_into().expect("five BRDF parameters")
    }
}

/// Per-view screen-space setup shared by the forward and backward passes.
struct Prepared {
    /// Canonically ordered faces in front of the near plane.
    faces: Vec<[usize; 3]>,
    /// Index of each prepared face in the submitted face list.
    source: Vec<usize>,
    screen: Vec<[f64; 2]>,
    depth: Vec<f64>,
    area: Vec<f64>,
    /// Expanded pixel-center bounds `[x0, x1, y0, y1]`, inclusive.
    bounds: Vec<[usize; 4]>,
    tiles_x: usize,
    tiles: Vec<Vec<u32>>,
}

fn canonical_order(faces: &[[usize; 3]]) -> Vec<(usize, [usize; 3])> {
    let mut out: Vec<(usize, [usize; 3])> = faces
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let m = (0..3).min_by_key(|&k| f[k]).expect("three corners");
            (i, [f[m], f[(m + 1) % 3], f[(m + 2) % 3]])
        })
        .collect();
    out.sort_by_key(|&(i, f)| (f, i));
    out
}

fn prepare(scene: &SceneData<'_>, faces: &[[usize; 3]], intr: &Intrinsics, cfg: &SoftRasterConfig) -> Prepared {
    let nv = scene.verts.len() / 3;
    let mut screen = Vec::with_capacity(nv);
    let mut depth = Vec::with_capacity(nv);
    for i in 0..nv {
        let [x, y, z] = scene.vert(i);
        screen.push([intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy]);
        depth.push(z);
    }
    let margin_px = cfg.margin() / intr.screen_scale();
    let (w, h) = (intr.width, intr.height);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut prep = Prepared {
        faces: Vec::new(),
        source: Vec::new(),
        screen,
        depth,
        area: Vec::new(),
        bounds: Vec::new(),
        tiles_x,
        tiles: vec![Vec::new(); tiles_x * tiles_y],
    };
    for (src, f) in canonical_order(faces) {
        if f.iter().any(|&v| prep.depth[v] <= cfg.near) {
            continue;
        }
        let p = f.map(|v| prep.screen[v]);
        let lo = |k: usize| p.iter().map(|q| q[k]).fold(f64::INFINITY, f64::min) - margin_px - 0.5;
        let hi = |k: usize| p.iter().map(|q| q[k]).fold(f64::NEG_INFINITY, f64::max) + margin_px - 0.5;
        let (x0, x1, y0, y1) = (lo(0).ceil(), hi(0).floor(), lo(1).ceil(), hi(1).floor());
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) {
            continue;
        }
        if x1 < 0.0 || y1 < 0.0 || x0 > (w - 1) as f64 || y0 > (h - 1) as f64 || x0 > x1 || y0 > y1 {
            continue;
        }
        let b = [
            x0.max(0.0) as usize,
            x1.min((w - 1) as f64) as usize,
            y0.max(0.0) as usize,
            y1.min((h - 1) as f64) as usize,
        ];
        let id = prep.faces.len() as u32;
        for ty in b[2] / TILE..=b[3] / TILE {
            for tx in b[0] / TILE..=b[1] / TILE {
                prep.tiles[ty * tiles_x + tx].push(id);
            }
        }
        prep.area.push(cross2(sub2(p[1], p[0]), sub2(p[2], p[0])));
        prep.faces.push(f);
        prep.source.push(src);
        prep.bounds.push(b);
    }
    prep
}

fn sub2(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One triangle's contribution at one pixel.
struct Fragment {
    face: usize,
    coverage: f64,
    inside: bool,
    /// Closest edge runs from corner `edge` to corner `edge + 1`.
    edge: usize,
    t: f64,
    t_clamped: bool,
    diff: [f64; 2],
    screen_bary: [f64; 3],
    bary: [f64; 3],
    inv_w: f64,
    z: f64,
    zn: f64,
}

fn fragment(prep: &Prepared, fi: usize, p: [f64; 2], s2: f64, cfg: &SoftRasterConfig) -> Option<Fragment> {
    let f = prep.faces[fi];
    let q = f.map(|v| prep.screen[v]);
    let area = prep.area[fi];
    let mut screen_bary = [0.0; 3];
    let mut inside = false;
    if area.abs() > SCREEN_AREA_EPS {
        for k in 0..3 {
            screen_bary[k] = cross2(sub2(q[(k + 1) % 3], p), sub2(q[(k + 2) % 3], p)) / area;
        }
        inside = screen_bary.iter().all(|&w| w >= 0.0);
    }
    let mut best = (f64::INFINITY, 0, 0.0, false, [0.0; 2]);
    for k in 0..3 {
        let e = sub2(q[(k + 1) % 3], q[k]);
        let r = sub2(p, q[k]);
        let m = dot2(e, e);
        let raw = if m > 0.0 { dot2(r, e) / m } else { 0.0 };
        let t = raw.clamp(0.0, 1.0);
        let diff = [r[0] - t * e[0], r[1] - t * e[1]];
        let d2 = dot2(diff, diff);
        if d2 < best.0 {
            best = (d2, k, t, !(raw > 0.0 && raw < 1.0), diff);
        }
    }
    let (dist2, edge, t, t_clamped, diff) = best;
    let d2n = dist2 * s2;
    let coverage = sigmoid(if inside { d2n } else { -d2n } / cfg.sigma);
    if coverage < cfg.coverage_cutoff {
        return None;
    }
    let lambda = if inside {
        screen_bary
    } else {
        let mut l = [0.0; 3];
        l[edge] = 1.0 - t;
        l[(edge + 1) % 3] = t;
        l
    };
    let mut w = 0.0;
    let mut bary = [0.0; 3];
    for k in 0..3 {
        bary[k] = lambda[k] / prep.depth[f[k]];
        w += bary[k];
    }
    if !(w > 0.0) {
        return None;
    }
    let inv_w = 1.0 / w;
    for b in &mut bary {
        *b *= inv_w;
    }
    let z = inv_w;
    if !(z > cfg.near && z < cfg.far) {
        return None;
    }
    Some(Fragment {
        face: fi,
        coverage,
        inside,
        edge,
        t,
        t_clamped,
        diff,
        screen_bary,
        bary,
        inv_w,
        z,
        zn: (cfg.far - z) / (cfg.far - cfg.near),
    })
}

struct Surface {
    position: [f64; 3],
    normal: [f64; 3],
    theta: [f64; 5],
}

fn interpolate(scene: &SceneData<'_>, f: [usize; 3], bary: &[f64; 3]) -> Surface {
    let mut s = Surface {
        position: [0.0; 3],
        normal: [0.0; 3],
        theta: [0.0; 5],
    };
    for k in 0..3 {
        let (x, n, t) = (scene.vert(f[k]), scene.normal(f[k]), scene.theta(f[k]));
        for c in 0..3 {
            s.position[c] += bary[k] * x[c];
            s.normal[c] += bary[k] * n[c];
        }
        for c in 0..5 {
            s.theta[c] += bary[k] * t[c];
        }
    }
    s
}

fn pixel_center(idx: usize, width: usize) -> [f64; 2] {
    [(idx % width) as f64 + 0.5, (idx / width) as f64 + 0.5]
}

fn pixel_fragments(prep: &Prepared, idx: usize, intr: &Intrinsics, cfg: &SoftRasterConfig) -> Vec<Fragment> {
    let (px, py) = (idx % intr.width, idx / intr.width);
    let p = pixel_center(idx, intr.width);
    let s = intr.screen_scale();
    prep.tiles[(py / TILE) * prep.tiles_x + px / TILE]
        .iter()
        .filter_map(|&fi| {
            let fi = fi as usize;
            let b = prep.bounds[fi];
            if px < b[0] || px > b[1] || py < b[2] || py > b[3] {
                return None;
            }
            fragment(prep, fi, p, s * s, cfg)
        })
        .collect()
}

/// Aggregation state of one pixel.
struct PixelState {
    frags: Vec<Fragment>,
    colors: Vec<[f64; 3]>,
    /// `exp((zn − zmax)/γ)`, zero when dropped.
    expo: Vec<f64>,
    den: f64,
    agg: [f64; 3],
    sil: f64,
}

fn shade_pixel(scene: &SceneData<'_>, prep: &Prepared, frags: Vec<Fragment>, cfg: &SoftRasterConfig) -> PixelState {
    let zmax = frags.iter().map(|f| f.zn).fold(f64::NEG_INFINITY, f64::max);
    let mut colors = Vec::with_capacity(frags.len());
    let mut expo = Vec::with_capacity(frags.len());
    let mut den = 0.0;
    let mut num = [0.0; 3];
    let mut transmit = 1.0;
    for f in &frags {
        transmit *= 1.0 - f.coverage;
        let a = (f.zn - zmax) / cfg.gamma;
        if a < MIN_EXPONENT {
            colors.push([0.0; 3]);
            expo.push(0.0);
            continue;
        }
        let x = a.exp();
        let surf = interpolate(scene, prep.faces[f.face], &f.bary);
        let c = shade_local(surf.normal, surf.position, &scene.light, &surf.theta);
        let e = f.coverage * x;
        den += e;
        for k in 0..3 {
            num[k] += e * c[k];
        }
        colors.push(c);
        expo.push(x);
    }
    let agg = if den > 0.0 { num.map(|v| v / den) } else { [0.0; 3] };
    PixelState {
        frags,
        colors,
        expo,
        den,
        agg,
        sil: 1.0 - transmit,
    }
}

fn scene_from<'a>(verts: &'a Tensor, normals: &'a Tensor, theta: &'a Tensor, light: &Tensor, directional: bool) -> SceneData<'a> {
    let l = [light.data()[0], light.data()[1], light.data()[2]];
    SceneData {
        verts: verts.data(),
        normals: normals.data(),
        theta: theta.data(),
        light: if directional { PointLight::Directional(l) } else { PointLight::Point(l) },
    }
}

/// Renders `H·W × 4` rows of `[r, g, b, silhouette]`.
fn forward(scene: &SceneData<'_>, faces: &[[usize; 3]], intr: &Intrinsics, cfg: &SoftRasterConfig) -> Result<Vec<f64>, RenderError> {
    let prep = prepare(scene, faces, intr, cfg);
    let (w, h) = (intr.width, intr.height);
    let bands = h.div_ceil(TILE);
    let chunks = exec::map_indexed(bands, |band| -> Result<Vec<f64>, RenderError> {
        let rows = band * TILE..((band + 1) * TILE).min(h);
        let mut out = Vec::with_capacity(rows.len() * w * 4);
        for idx in rows.start * w..rows.end * w {
            let st = shade_pixel(scene, &prep, pixel_fragments(&prep, idx, intr, cfg), cfg);
            if let Some(j) = st.colors.iter().position(|c| !c.iter().all(|v| v.is_finite())) {
                return Err(RenderError::NonFinite {
                    pixel: (idx % w, idx / w),
                    face: Some(prep.source[st.frags[j].face]),
                });
            }
            let s = st.sil;
            for k in 0..3 {
                out.push(s * st.agg[k] + (1.0 - s) * cfg.background[k]);
            }
            out.push(s);
            if !out[out.len() - 4..].iter().all(|v| v.is_finite()) {
                return Err(RenderError::NonFinite {
                    pixel: (idx % w, idx / w),
                    face: None,
                });
            }
        }
        Ok(out)
    });
    let mut image = Vec::with_capacity(w * h * 4);
    for c in chunks {
        image.extend(c?);
    }
    Ok(image)
}

/// Gradient contribution to one vertex: position, normal, θ.
type VertexGrad = (u32, [f64; 11]);

#[allow(clippy::too_many_arguments)]
fn pixel_backward(
    scene: &SceneData<'_>,
    prep: &Prepared,
    st: &PixelState,
    p: [f64; 2],
    g: &[f64],
    intr: &Intrinsics,
    cfg: &SoftRasterConfig,
    out: &mut Vec<VertexGrad>,
    g_light: &mut [f64; 3],
) {
    let n = st.frags.len();
    if n == 0 {
        return;
    }
    let s = st.sil;
    let mut g_sil = g[3];
    let mut g_agg = [0.0; 3];
    for k in 0..3 {
        g_sil += g[k] * (st.agg[k] - cfg.background[k]);
        g_agg[k] = s * g[k];
    }
    // transmittance products excluding each fragment
    let mut prefix = vec![1.0; n + 1];
    for j in 0..n {
        prefix[j + 1] = prefix[j] * (1.0 - st.frags[j].coverage);
    }
    let mut suffix = 1.0;
    let mut others = vec![0.0; n];
    for j in (0..n).rev() {
        others[j] = prefix[j] * suffix;
        suffix *= 1.0 - st.frags[j].coverage;
    }
    let scale = intr.screen_scale();
    let s2 = scale * scale;
    let depth_range = cfg.far - cfg.near;
    for (j, fr) in st.frags.iter().enumerate() {
        let f = prep.faces[fr.face];
        let d = fr.coverage;
        let mut g_d = g_sil * others[j];
        let mut g_bary = [0.0; 3];
        let mut g_z = 0.0;
        let mut grads = [[0.0; 11]; 3];
        if st.expo[j] > 0.0 {
            let e = d * st.expo[j];
            let c = st.colors[j];
            let g_e: f64 = (0..3).map(|k| g_agg[k] * (c[k] - st.agg[k])).sum::<f64>() / st.den;
            let g_c = g_agg.map(|v| v * e / st.den);
            g_d += g_e * st.expo[j];
            let g_zn = g_e * e / cfg.gamma;
            g_z = -g_zn / depth_range;
            let surf = interpolate(scene, f, &fr.bary);
            let sg = shade_local_vjp(surf.normal, surf.position, &scene.light, &surf.theta, g_c);
            for k in 0..3 {
                g_light[k] += sg.light[k];
            }
            for (k, &v) in f.iter().enumerate() {
                let (x, nn, t) = (scene.vert(v), scene.normal(v), scene.theta(v));
                let b = fr.bary[k];
                for c in 0..3 {
                    g_bary[k] += sg.position[c] * x[c] + sg.normal[c] * nn[c];
                    grads[k][c] += b * sg.position[c];
                    grads[k][3 + c] += b * sg.normal[c];
                }
                for c in 0..5 {
                    g_bary[k] += sg.theta[c] * t[c];
                    grads[k][6 + c] += b * sg.theta[c];
                }
            }
        }
        // perspective-correct barycentrics and depth
        let wdot: f64 = (0..3).map(|k| g_bary[k] * fr.bary[k]).sum();
        let lambda = if fr.inside {
            fr.screen_bary
        } else {
            let mut l = [0.0; 3];
            l[fr.edge] = 1.0 - fr.t;
            l[(fr.edge + 1) % 3] = fr.t;
            l
        };
        let mut g_lambda = [0.0; 3];
        let mut g_screen = [[0.0; 2]; 3];
        let mut g_depth = [0.0; 3];
        for k in 0..3 {
            let g_q = (g_bary[k] - wdot) * fr.inv_w - g_z * fr.z * fr.z;
            let zk = prep.depth[f[k]];
            g_lambda[k] = g_q / zk;
            g_depth[k] = -g_q * lambda[k] / (zk * zk);
        }
        let q = f.map(|v| prep.screen[v]);
        if fr.inside {
            let a = prep.area[fr.face];
            let ldot: f64 = (0..3).map(|k| g_lambda[k] * fr.screen_bary[k]).sum();
            for k in 0..3 {
                let g_e = (g_lambda[k] - ldot) / a;
                let r1 = sub2(q[(k + 1) % 3], p);
                let r2 = sub2(q[(k + 2) % 3], p);
                g_screen[(k + 1) % 3][0] += g_e * r2[1];
                g_screen[(k + 1) % 3][1] -= g_e * r2[0];
                g_screen[(k + 2) % 3][0] -= g_e * r1[1];
                g_screen[(k + 2) % 3][1] += g_e * r1[0];
            }
        } else if !fr.t_clamped {
            let (i0, i1) = (fr.edge, (fr.edge + 1) % 3);
            let e = sub2(q[i1], q[i0]);
            let r = sub2(p, q[i0]);
            let m = dot2(e, e);
            let g_t = g_lambda[i1] - g_lambda[i0];
            for c in 0..2 {
                g_screen[i0][c] += g_t * (-e[c] - r[c] + 2.0 * fr.t * e[c]) / m;
                g_screen[i1][c] += g_t * (r[c] - 2.0 * fr.t * e[c]) / m;
            }
        }
        // coverage through the distance to the closest edge
        let sign = if fr.inside { 1.0 } else { -1.0 };
        let g_dist2 = g_d * sign * d * (1.0 - d) / cfg.sigma * s2;
        let (i0, i1) = (fr.edge, (fr.edge + 1) % 3);
        for c in 0..2 {
            g_screen[i0][c] -= g_dist2 * 2.0 * (1.0 - fr.t) * fr.diff[c];
            g_screen[i1][c] -= g_dist2 * 2.0 * fr.t * fr.diff[c];
        }
        for (k, &v) in f.iter().enumerate() {
            let [x, y, z] = scene.vert(v);
            let [gu, gv] = g_screen[k];
            grads[k][0] += gu * intr.fx / z;
            grads[k][1] += gv * intr.fy / z;
            grads[k][2] += g_depth[k] - (gu * intr.fx * x + gv * intr.fy * y) / (z * z);
            out.push((v as u32, grads[k]));
        }
    }
}

struct BackwardResult {
    verts: Vec<f64>,
    normals: Vec<f64>,
    theta: Vec<f64>,
    light: [f64; 3],
}

fn backward(scene: &SceneData<'_>, faces: &[[usize; 3]], intr: &Intrinsics, cfg: &SoftRasterConfig, g: &[f64]) -> BackwardResult {
    let prep = prepare(scene, faces, intr, cfg);
    let (w, h) = (intr.width, intr.height);
    let bands = h.div_ceil(TILE);
    let chunks = exec::map_indexed(bands, |band| {
        let rows = band * TILE..((band + 1) * TILE).min(h);
        let mut grads = Vec::new();
        let mut g_light = [0.0; 3];
        for idx in rows.start * w..rows.end * w {
            let gp = &g[4 * idx..4 * idx + 4];
            if gp.iter().all(|&v| v == 0.0) {
                continue;
            }
            let st = shade_pixel(scene, &prep, pixel_fragments(&prep, idx, intr, cfg), cfg);
            pixel_backward(scene, &prep, &st, pixel_center(idx, w), gp, intr, cfg, &mut grads, &mut g_light);
        }
        (grads, g_light)
    });
    let nv = scene.verts.len() / 3;
    let mut res = BackwardResult {
        verts: vec![0.0; nv * 3],
        normals: vec![0.0; nv * 3],
        theta: vec![0.0; nv * 5],
        light: [0.0; 3],
    };
    for (grads, gl) in chunks {
        for (v, gv) in grads {
            let v = v as usize;
            for c in 0..3 {
                res.verts[3 * v + c] += gv[c];
                res.normals[3 * v + c] += gv[3 + c];
            }
            for c in 0..5 {
                res.theta[5 * v + c] += gv[6 + c];
            }
        }
        for c in 0..3 {
            res.light[c] += gl[c];
        }
    }
    res
}

fn check_inputs(verts: &Tensor, normals: &Tensor, theta: &Tensor, light: &Tensor, faces: &[[usize; 3]]) -> Result<(), RenderError> {
    let nv = match verts.dims2() {
        Some((n, 3)) => n,
        _ => return Err(RenderError::BadInput(format!("vertices must be n×3, got {:?}", verts.shape()))),
    };
    if normals.shape() != [nv, 3] {
        return Err(RenderError::BadInput(format!("normals must be {nv}×3, got {:?}", normals.shape())));
    }
    if theta.shape() != [nv, 5] {
        return Err(RenderError::BadInput(format!("BRDF parameters must be {nv}×5, got {:?}", theta.shape())));
    }
    if light.len() != 3 {
        return Err(RenderError::BadInput("light must be a 3-vector".into()));
    }
    if faces.is_empty() || nv == 0 {
        return Err(RenderError::EmptyMesh);
    }
    if let Some(&bad) = faces.iter().flatten().find(|&&i| i >= nv) {
        return Err(RenderError::BadInput(format!("face index {bad} out of range for {nv} vertices")));
    }
    Ok(())
}

/// Camera-space inputs of [`soft_render_var`].
#[derive(Clone, Copy, Debug)]
pub struct SoftInputs<'t> {
    /// `n × 3` vertex positions in camera space.
    pub vertices: Var<'t>,
    /// `n × 3` vertex normals in camera space.
    pub normals: Var<'t>,
    /// `n × 5` BRDF parameters.
    pub theta: Var<'t>,
    /// Light position, or unit direction toward the light when
    /// `directional`.
    pub light: Var<'t>,
    pub directional: bool,
}

/// Taped soft rasterization; returns `H·W × 4` rows of
/// `[r, g, b, silhouette]`.
pub fn soft_render_var<'t>(
    inputs: SoftInputs<'t>,
    faces: Rc<Vec<[usize; 3]>>,
    intr: Intrinsics,
    cfg: &SoftRasterConfig,
) -> Result<Var<'t>, RenderError> {
    cfg.validate()?;
    let (v, n, t, l) = (inputs.vertices.value(), inputs.normals.value(), inputs.theta.value(), inputs.light.value());
    check_inputs(&v, &n, &t, &l, &faces)?;
    let directional = inputs.directional;
    let data = forward(&scene_from(&v, &n, &t, &l, directional), &faces, &intr, cfg)?;
    let value = Tensor::matrix(intr.width * intr.height, 4, data)?;
    let cfg = cfg.clone();
    let tape = inputs.vertices.tape();
    Ok(tape.custom(
        "soft_render",
        &[inputs.vertices, inputs.normals, inputs.theta, inputs.light],
        value,
        move |args: &BackwardArgs<'_>| {
            let scene = scene_from(args.inputs[0], args.inputs[1], args.inputs[2], args.inputs[3], directional);
            let r = backward(&scene, &faces, &intr, &cfg, args.grad.data());
            let shaped = |d: Vec<f64>, like: &Tensor| Tensor::new(like.shape().to_vec(), d).expect("gradient mirrors input");
            vec![
                Some(shaped(r.verts, args.inputs[0])),
                Some(shaped(r.normals, args.inputs[1])),
                Some(shaped(r.theta, args.inputs[2])),
                Some(Tensor::new(args.inputs[3].shape().to_vec(), r.light.to_vec()).expect("3-vector")),
            ]
        },
    ))
}

/// Untaped soft rasterization of flat camera-space arrays.
pub fn soft_render_plain(
    vertices: &Tensor,
    normals: &Tensor,
    theta: &Tensor,
    light: PointLight,
    faces: &[[usize; 3]],
    intr: Intrinsics,
    cfg: &SoftRasterConfig,
) -> Result<Vec<f64>, RenderError> {
    cfg.validate()?;
    let (l, directional) = match light {
        PointLight::Point(p) => (p, false),
        PointLight::Directional(d) => (d, true),
    };
    let l = Tensor::vector(l.to_vec());
    check_inputs(vertices, normals, theta, &l, faces)?;
    forward(&scene_from(vertices, normals, theta, &l, directional), faces, &intr, cfg)
}

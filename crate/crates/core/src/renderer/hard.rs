//! Z-buffer rasterization with per-pixel shading.

use crate::exec;
use crate::geometry::{normalize, vertex_normals_lenient, Mesh, Vec3};
use crate::reflectance::shade_local;

use super::camera::{mat_vec, transpose};
use super::{Camera, Light, RenderError};

/// Hard-rasterized view: shaded image plus geometric buffers.
#[derive(Clone, Debug)]
pub struct HardRender {
    pub width: usize,
    pub height: usize,
    /// `H·W·3` linear RGB.
    pub image: Vec<f64>,
    pub mask: Vec<bool>,
    /// Camera-space depth; 0 where the mask is off.
    pub depth: Vec<f64>,
    /// Unit world-space normal per pixel; zero where the mask is off.
    pub normals: Vec<Vec3>,
    /// Index of the visible face per pixel.
    pub face: Vec<Option<usize>>,
}

const BAND: usize = 8;

/// Renders `mesh` with per-vertex BRDF parameters `theta`.
pub fn hard_render(
    mesh: &Mesh,
    theta: &[[f64; 5]],
    cam: &Camera,
    light: &Light,
    near: f64,
    background: [f64; 3],
) -> Result<HardRender, RenderError> {
    cam.validate()?;
    light.validate()?;
    if mesh.faces.is_empty() {
        return Err(RenderError::EmptyMesh);
    }
    if theta.len() != mesh.vertices.len() {
        return Err(RenderError::BadInput(format!(
            "{} BRDF samples for {} vertices",
            theta.len(),
            mesh.vertices.len()
        )));
    }
    let world_normals = vertex_normals_lenient(&mesh.flat_vertices(), &mesh.faces);
    let cam_verts: Vec<Vec3> = mesh.vertices.iter().map(|&v| cam.world_to_camera(v)).collect();
    let cam_normals: Vec<Vec3> = world_normals.iter().map(|&n| mat_vec(&cam.rotation, n)).collect();
    let screen: Vec<[f64; 2]> = cam_verts
        .iter()
        .map(|v| [cam.fx * v[0] / v[2] + cam.cx, cam.fy * v[1] / v[2] + cam.cy])
        .collect();
    let (w, h) = (cam.width, cam.height);
    // pixel-center bounds per face, None when culled
    let bounds: Vec<Option<[usize; 4]>> = mesh
        .faces
        .iter()
        .map(|f| {
            if f.iter().any(|&v| cam_verts[v][2] <= near) {
                return None;
            }
            let p = f.map(|v| screen[v]);
            let lo = |k: usize| (p.iter().map(|q| q[k]).fold(f64::INFINITY, f64::min) - 0.5).ceil();
            let hi = |k: usize| (p.iter().map(|q| q[k]).fold(f64::NEG_INFINITY, f64::max) - 0.5).floor();
            let (x0, x1, y0, y1) = (lo(0).max(0.0), hi(0).min((w - 1) as f64), lo(1).max(0.0), hi(1).min((h - 1) as f64));
            if !(x0 <= x1 && y0 <= y1) {
                return None;
            }
            Some([x0 as usize, x1 as usize, y0 as usize, y1 as usize])
        })
        .collect();
    let cam_light = light.in_camera(cam);
    let to_world = transpose(&cam.rotation);
    let bands = exec::map_indexed(h.div_ceil(BAND), |band| {
        let (r0, r1) = (band * BAND, ((band + 1) * BAND).min(h));
        let n = (r1 - r0) * w;
        let mut zbuf = vec![f64::INFINITY; n];
        let mut hit: Vec<Option<(usize, [f64; 3])>> = vec![None; n];
        for (fi, f) in mesh.faces.iter().enumerate() {
            let Some(b) = bounds[fi] else { continue };
            if b[3] < r0 || b[2] >= r1 {
                continue;
            }
            let q = f.map(|v| screen[v]);
            let area = (q[1][0] - q[0][0]) * (q[2][1] - q[0][1]) - (q[1][1] - q[0][1]) * (q[2][0] - q[0][0]);
            if area.abs() < 1e-12 {
                continue;
            }
            for py in b[2].max(r0)..=b[3].min(r1 - 1) {
                for px in b[0]..=b[1] {
                    let p = [px as f64 + 0.5, py as f64 + 0.5];
                    let mut l = [0.0; 3];
                    for k in 0..3 {
                        let a = q[(k + 1) % 3];
                        let c = q[(k + 2) % 3];
                        l[k] = ((a[0] - p[0]) * (c[1] - p[1]) - (a[1] - p[1]) * (c[0] - p[0])) / area;
                    }
                    if l.iter().any(|&x| x < 0.0) {
                        continue;
                    }
                    let mut wsum = 0.0;
                    let mut bary = [0.0; 3];
                    for k in 0..3 {
                        bary[k] = l[k] / cam_verts[f[k]][2];
                        wsum += bary[k];
                    }
                    let z = 1.0 / wsum;
                    let i = (py - r0) * w + px;
                    if z < zbuf[i] {
                        zbuf[i] = z;
                        hit[i] = Some((fi, bary.map(|x| x * z)));
                    }
                }
            }
        }
        let mut out = Vec::with_capacity(n);
        for (i, hv) in hit.into_iter().enumerate() {
            out.push(hv.map(|(fi, bary)| {
                let f = mesh.faces[fi];
                let mut x = [0.0; 3];
                let mut nn = [0.0; 3];
                let mut t = [0.0; 5];
                for k in 0..3 {
                    for c in 0..3 {
                        x[c] += bary[k] * cam_verts[f[k]][c];
                        nn[c] += bary[k] * cam_normals[f[k]][c];
                    }
                    for c in 0..5 {
                        t[c] += bary[k] * theta[f[k]][c];
                    }
                }
                (fi, zbuf[i], shade_local(nn, x, &cam_light, &t), nn)
            }));
        }
        out
    });
    let mut r = HardRender {
        width: w,
        height: h,
        image: Vec::with_capacity(w * h * 3),
        mask: Vec::with_capacity(w * h),
        depth: Vec::with_capacity(w * h),
        normals: Vec::with_capacity(w * h),
        face: Vec::with_capacity(w * h),
    };
    for (idx, px) in bands.into_iter().flatten().enumerate() {
        match px {
            Some((fi, z, c, n)) => {
                if !c.iter().all(|v| v.is_finite()) {
                    return Err(RenderError::NonFinite {
                        pixel: (idx % w, idx / w),
                        face: Some(fi),
                    });
                }
                r.image.extend_from_slice(&c);
                r.mask.push(true);
                r.depth.push(z);
                r.normals.push(normalize(mat_vec(&to_world, n)));
                r.face.push(Some(fi));
            }
            None => {
                r.image.extend_from_slice(&background);
                r.mask.push(false);
                r.depth.push(0.0);
                r.normals.push([0.0; 3]);
                r.face.push(None);
            }
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;
    use crate::renderer::camera::IDENTITY;

    fn front_camera(size: usize) -> Camera {
        Camera {
            fx: size as f64,
            fy: size as f64,
            cx: size as f64 / 2.0,
            cy: size as f64 / 2.0,
            width: size,
            height: size,
            rotation: IDENTITY,
            translation: [0.0, 0.0, 3.0],
        }
    }

    #[test]
    fn sphere_depth_and_normals() {
        let mesh = icosphere(4, None).unwrap();
        let theta = vec![[0.5, 0.5, 0.5, 0.0, 0.5]; mesh.vertices.len()];
        let r = hard_render(&mesh, &theta, &front_camera(32), &Light::collocated(), 0.1, [0.0; 3]).unwrap();
        let center = 16 * 32 + 16;
        assert!(r.mask[center]);
        // nearest surface point of the unit sphere is at depth 2
        assert!((r.depth[center] - 2.0).abs() < 0.01, "{}", r.depth[center]);
        assert!(r.normals[center][2] < -0.99);
        assert!(!r.mask[0]);
        // Lambertian, collocated light: ρ·cosθ/d² at normal incidence
        let expected = 0.5 / 4.0;
        assert!((r.image[3 * center] - expected).abs() < 0.01 * expected, "{} vs {expected}", r.image[3 * center]);
    }

    #[test]
    fn nearest_face_wins() {
        let mesh = Mesh::new(
            vec![
                [-1.0, -1.0, 0.0],
                [1.0, -1.0, 0.0],
                [0.0, 1.0, 0.0],
                [-1.0, -1.0, -0.5],
                [1.0, -1.0, -0.5],
                [0.0, 1.0, -0.5],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        );
        let theta = vec![[0.5; 5]; 6];
        let r = hard_render(&mesh, &theta, &front_camera(16), &Light::collocated(), 0.1, [0.0; 3]).unwrap();
        let center = 8 * 16 + 8;
        assert_eq!(r.face[center], Some(1));
        assert!((r.depth[center] - 2.5).abs() < 1e-12);
    }
}

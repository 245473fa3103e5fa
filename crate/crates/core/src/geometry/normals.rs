use crate::autodiff::{AdError, BackwardArgs, Tensor, Var};

use super::mesh::{add, cross, norm, scale, sub, Mesh, Vec3};
use super::GeometryError;

pub const DEGENERATE_AREA: f64 = 1e-12;

fn accumulate(vertices: &[f64], faces: &[[usize; 3]]) -> Vec<Vec3> {
    let p = |i: usize| [vertices[3 * i], vertices[3 * i + 1], vertices[3 * i + 2]];
    let mut sums = vec![[0.0; 3]; vertices.len() / 3];
    for &[a, b, c] in faces {
        let n = cross(sub(p(b), p(a)), sub(p(c), p(a)));
        for v in [a, b, c] {
            sums[v] = add(sums[v], n);
        }
    }
    sums
}

/// Area-weighted vertex normals.
///
/// Fails if any face has area below [`DEGENERATE_AREA`], listing them.
pub fn vertex_normals(mesh: &Mesh) -> Result<Vec<Vec3>, GeometryError> {
    let degenerate: Vec<usize> = (0..mesh.faces.len())
        .filter(|&f| 0.5 * norm(mesh.face_cross(f)) < DEGENERATE_AREA)
        .collect();
    if !degenerate.is_empty() {
        return Err(GeometryError::DegenerateFaces { faces: degenerate });
    }
    let sums = accumulate(&mesh.flat_vertices(), &mesh.faces);
    Ok(sums.into_iter().map(|s| scale(s, 1.0 / norm(s))).collect())
}

/// Area-weighted normals of flat `n × 3` coordinates; vertices whose summed
/// face normal vanishes get a zero normal.
pub fn vertex_normals_lenient(vertices: &[f64], faces: &[[usize; 3]]) -> Vec<Vec3> {
    accumulate(vertices, faces)
        .into_iter()
        .map(|s| {
            let l = norm(s);
            if l > 0.0 {
                scale(s, 1.0 / l)
            } else {
                [0.0; 3]
            }
        })
        .collect()
}

/// Taped area-weighted normals of an `n × 3` vertex variable.
///
/// Vertices whose summed face normal vanishes get a zero normal instead of
/// an error so a training step never dies on a transient fold.
pub fn vertex_normals_var<'t>(vertices: Var<'t>, faces: &[[usize; 3]]) -> Result<Var<'t>, AdError> {
    let v = vertices.value();
    if v.dims2().map(|d| d.1) != Some(3) {
        return Err(AdError::ShapeMismatch {
            op: "vertex_normals",
            lhs: v.shape().to_vec(),
            rhs: vec![0, 3],
        });
    }
    let n = v.shape()[0];
    if let Some(bad) = faces.iter().flatten().find(|&&i| i >= n) {
        return Err(AdError::Domain {
            op: "vertex_normals",
            detail: format!("face index {bad} out of range for {n} vertices"),
        });
    }
    let sums = accumulate(v.data(), faces);
    let lengths: Vec<f64> = sums.iter().map(|&s| norm(s)).collect();
    let data: Vec<f64> = sums
        .iter()
        .zip(&lengths)
        .flat_map(|(&s, &l)| if l > 0.0 { scale(s, 1.0 / l) } else { [0.0; 3] })
        .collect();
    let value = Tensor::matrix(n, 3, data)?;
    let faces = faces.to_vec();
    Ok(vertices.tape().custom("vertex_normals", &[vertices], value, move |args: &BackwardArgs<'_>| {
        let x = args.inputs[0].data();
        let y = args.output.data();
        let g = args.grad.data();
        let gs: Vec<Vec3> = (0..n)
            .map(|i| {
                if lengths[i] == 0.0 {
                    return [0.0; 3];
                }
                let yi = [y[3 * i], y[3 * i + 1], y[3 * i + 2]];
                let gi = [g[3 * i], g[3 * i + 1], g[3 * i + 2]];
                let d = yi[0] * gi[0] + yi[1] * gi[1] + yi[2] * gi[2];
                scale(sub(gi, scale(yi, d)), 1.0 / lengths[i])
            })
            .collect();
        let p = |i: usize| [x[3 * i], x[3 * i + 1], x[3 * i + 2]];
        let mut out = vec![0.0; n * 3];
        for &[a, b, c] in &faces {
            let gc = add(add(gs[a], gs[b]), gs[c]);
            let e1 = sub(p(b), p(a));
            let e2 = sub(p(c), p(a));
            let g1 = cross(e2, gc);
            let g2 = cross(gc, e1);
            for k in 0..3 {
                out[3 * a + k] -= g1[k] + g2[k];
                out[3 * b + k] += g1[k];
                out[3 * c + k] += g2[k];
            }
        }
        vec![Some(Tensor::matrix(n, 3, out).expect("shape"))]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};
    use crate::geometry::{icosphere, mesh::dot};

    #[test]
    fn sphere_normals_follow_radius() {
        // Area weighting peaks at 0.677° next to the twelve valence-5 vertices.
        let m = icosphere(3, None).unwrap();
        let n = vertex_normals(&m).unwrap();
        let limit = 0.7f64.to_radians().cos();
        for (v, nv) in m.vertices.iter().zip(&n) {
            assert!(dot(*v, *nv) > limit, "{}", dot(*v, *nv).min(1.0).acos().to_degrees());
        }
    }

    #[test]
    fn flat_square_normals_are_exact() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        );
        assert!(vertex_normals(&m).unwrap().iter().all(|n| *n == [0.0, 0.0, 1.0]));
    }

    #[test]
    fn degenerate_faces_are_listed() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 3], [0, 1, 2]],
        );
        assert_eq!(vertex_normals(&m), Err(GeometryError::DegenerateFaces { faces: vec![1] }));
    }

    #[test]
    fn taped_normals_match_and_differentiate() {
        let mut m = icosphere(1, None).unwrap();
        for (i, v) in m.vertices.iter_mut().enumerate() {
            let s = 1.0 + 0.2 * (i as f64 * 1.7).sin();
            *v = scale(*v, s);
        }
        let plain = vertex_normals(&m).unwrap();
        let x = Tensor::matrix(m.vertices.len(), 3, m.flat_vertices()).unwrap();
        let tape = crate::autodiff::Tape::new();
        let nv = vertex_normals_var(tape.leaf(x.clone()), &m.faces).unwrap();
        let flat: Vec<f64> = plain.iter().flatten().copied().collect();
        assert_eq!(nv.value().data(), flat.as_slice());

        let w: Vec<f64> = (0..x.len()).map(|i| (i as f64 * 0.61).cos()).collect();
        let faces = m.faces.clone();
        let r = grad_check(
            |tape, v| {
                let n = vertex_normals_var(v, &faces)?;
                Ok(n.mul(tape.constant(Tensor::new(x.shape().to_vec(), w.clone())?))?.sum())
            },
            &x,
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed(), "{:?}", r.failures);
    }
}

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mesh::{normalize, Mesh, Vec3};
use super::GeometryError;

pub const MAX_ICOSPHERE_LEVEL: u32 = 8;

pub fn icosphere_vertex_count(level: u32) -> usize {
    10 * 4usize.pow(level) + 2
}

pub fn icosphere_face_count(level: u32) -> usize {
    20 * 4usize.pow(level)
}

fn icosahedron() -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let raw: [Vec3; 12] = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    Mesh::new(raw.iter().map(|&v| normalize(v)).collect(), faces)
}

/// One 1-to-4 split. Existing vertices keep their indices and values;
/// midpoints are appended in face order and projected onto the sphere.
fn subdivide(mesh: &Mesh) -> Mesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let (p, q) = (vertices[key.0], vertices[key.1]);
            vertices.push(normalize([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
            vertices.len() - 1
        })
    };
    for &[a, b, c] in &mesh.faces {
        let ab = midpoint(a, b, &mut vertices);
        let bc = midpoint(b, c, &mut vertices);
        let ca = midpoint(c, a, &mut vertices);
        faces.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
    }
    Mesh::new(vertices, faces)
}

/// Uniformly distributed rotation matrix (row-major) from a unit quaternion.
pub fn random_rotation<R: Rng>(rng: &mut R) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

pub fn rotate(r: &[[f64; 3]; 3], v: Vec3) -> Vec3 {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// Unit icosphere obtained by `level` subdivisions of an icosahedron,
/// optionally rotated by a seeded uniform random rotation.
///
/// Vertex `i` of level `l` is bitwise equal to vertex `i` of every finer
/// level (before rotation, and after the same rotation).
pub fn icosphere(level: u32, rotation_seed: Option<u64>) -> Result<Mesh, GeometryError> {
    if level > MAX_ICOSPHERE_LEVEL {
        return Err(GeometryError::LevelTooHigh {
            level,
            max: MAX_ICOSPHERE_LEVEL,
        });
    }
    let mut mesh = icosahedron();
    for _ in 0..level {
        mesh = subdivide(&mesh);
    }
    if let Some(seed) = rotation_seed {
        let r = random_rotation(&mut ChaCha8Rng::seed_from_u64(seed));
        for v in &mut mesh.vertices {
            *v = rotate(&r, *v);
        }
    }
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::{dot, norm};

    #[test]
    fn level_zero_is_an_icosahedron() {
        let m = icosphere(0, None).unwrap();
        assert_eq!((m.vertices.len(), m.faces.len(), m.edges().len()), (12, 20, 30));
        assert_eq!(m.euler_characteristic(), 2);
    }

    #[test]
    fn counts_and_closure_for_levels_0_to_6() {
        for level in 0..=6 {
            let m = icosphere(level, None).unwrap();
            assert_eq!(m.vertices.len(), icosphere_vertex_count(level));
            assert_eq!(m.faces.len(), icosphere_face_count(level));
            m.validate_closed().unwrap();
        }
        let m = icosphere(2, None).unwrap();
        assert_eq!((m.vertices.len(), m.faces.len()), (162, 320));
    }

    #[test]
    fn vertices_are_unit_and_faces_point_out() {
        for seed in [None, Some(3)] {
            let m = icosphere(3, seed).unwrap();
            assert!(m.vertices.iter().all(|v| (norm(*v) - 1.0).abs() < 1e-12));
            for f in 0..m.faces.len() {
                let c = m.face_cross(f);
                assert!(dot(c, m.vertices[m.faces[f][0]]) > 0.0);
            }
        }
    }

    #[test]
    fn coarse_vertices_survive_subdivision() {
        let coarse = icosphere(3, Some(5)).unwrap();
        let fine = icosphere(4, Some(5)).unwrap();
        assert_eq!(&fine.vertices[..coarse.vertices.len()], coarse.vertices.as_slice());
    }

    #[test]
    fn level_guard() {
        assert!(matches!(icosphere(9, None), Err(GeometryError::LevelTooHigh { level: 9, .. })));
    }

    #[test]
    fn rotations_are_proper() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let r = random_rotation(&mut rng);
            for i in 0..3 {
                for j in 0..3 {
                    let d: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                    assert!((d - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
                }
            }
            let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
            assert!((det - 1.0).abs() < 1e-12);
        }
    }
}

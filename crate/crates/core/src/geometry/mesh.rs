use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::GeometryError;

pub type Vec3 = [f64; 3];

/// Triangle mesh with counter-clockwise faces seen from outside.
///
/// `canonical` holds, per vertex, the point of the canonical domain that
/// was mapped onto it; `theta` holds per-vertex reflectance parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub canonical: Option<Vec<Vec3>>,
    pub theta: Option<Vec<[f64; 5]>>,
}

pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Self {
        Self {
            vertices,
            faces,
            canonical: None,
            theta: None,
        }
    }

    /// Vertices as a row-major `n × 3` buffer.
    pub fn flat_vertices(&self) -> Vec<f64> {
        self.vertices.iter().flatten().copied().collect()
    }

    pub fn flat_faces(&self) -> Vec<usize> {
        self.faces.iter().flatten().copied().collect()
    }

    pub fn from_flat(vertices: &[f64], faces: Vec<[usize; 3]>) -> Self {
        Self::new(vertices.chunks_exact(3).map(|v| [v[0], v[1], v[2]]).collect(), faces)
    }

    pub fn face_vertices(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Unnormalized face normal, `(b − a) × (c − a)`; its length is twice the area.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(f);
        cross(sub(b, a), sub(c, a))
    }

    /// Undirected edges as sorted index pairs, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }

    /// Sorted neighbor lists from the face connectivity.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb = vec![Vec::new(); self.vertices.len()];
        for (a, b) in self.edges() {
            nb[a].push(b);
            nb[b].push(a);
        }
        for n in &mut nb {
            n.sort_unstable();
        }
        nb
    }

    fn check_indices(&self) -> Result<(), GeometryError> {
        for (i, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&v| v >= self.vertices.len()) || f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeometryError::BadFace { face: i });
            }
        }
        Ok(())
    }

    /// Every undirected edge is shared by exactly two faces.
    pub fn check_watertight(&self) -> Result<(), GeometryError> {
        self.check_indices()?;
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                *count.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let mut bad: Vec<(usize, usize)> = count.into_iter().filter(|&(_, c)| c != 2).map(|(e, _)| e).collect();
        if bad.is_empty() {
            Ok(())
        } else {
            bad.sort_unstable();
            Err(GeometryError::NotWatertight { edges: bad })
        }
    }

    /// Adjacent faces traverse their shared edge in opposite directions.
    pub fn check_orientation(&self) -> Result<(), GeometryError> {
        self.check_indices()?;
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        let mut bad = Vec::new();
        for (i, f) in self.faces.iter().enumerate() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                if let Some(&other) = directed.get(&(a, b)) {
                    bad.push((other, i));
                } else {
                    directed.insert((a, b), i);
                }
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(GeometryError::InconsistentOrientation { face_pairs: bad })
        }
    }

    /// Watertight, consistently oriented, genus 0.
    pub fn validate_closed(&self) -> Result<(), GeometryError> {
        self.check_watertight()?;
        self.check_orientation()?;
        let chi = self.euler_characteristic();
        if chi != 2 {
            return Err(GeometryError::EulerCharacteristic { chi });
        }
        Ok(())
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for c in 0..3 {
                lo[c] = lo[c].min(v[c]);
                hi[c] = hi[c].max(v[c]);
            }
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounding_box();
        norm(sub(hi, lo))
    }

    /// Same geometry with every face's winding reversed.
    pub fn flipped(&self) -> Self {
        let mut m = self.clone();
        for f in &mut m.faces {
            f.swap(1, 2);
        }
        m
    }
}

//! Canonical icosphere domain, mesh validation, normals, diffeomorphism
//! diagnostics and mesh export.

mod deform;
mod icosphere;
mod intersect;
mod io;
mod mesh;
mod normals;

pub use deform::{deform_mesh, flow_points, INFERENCE_CHUNK};
pub use icosphere::{
    icosphere, icosphere_face_count, icosphere_vertex_count, random_rotation, rotate, MAX_ICOSPHERE_LEVEL,
};
pub use intersect::{count_flipped_faces, count_self_intersections, triangles_intersect, IntersectionReport};
pub use io::{albedo_to_byte, export_obj, export_ply, import_obj, import_ply};
pub use mesh::{add, cross, dot, norm, normalize, scale, sub, Mesh, Vec3};
pub use normals::{vertex_normals, vertex_normals_lenient, vertex_normals_var, DEGENERATE_AREA};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("icosphere level {level} exceeds the limit of {max}")]
    LevelTooHigh { level: u32, max: u32 },
    #[error("face {face} has an out-of-range or repeated vertex index")]
    BadFace { face: usize },
    #[error("mesh is not watertight; offending edges: {edges:?}")]
    NotWatertight { edges: Vec<(usize, usize)> },
    #[error("inconsistent face orientation between faces {face_pairs:?}")]
    InconsistentOrientation { face_pairs: Vec<(usize, usize)> },
    #[error("Euler characteristic is {chi}, expected 2")]
    EulerCharacteristic { chi: i64 },
    #[error("degenerate faces (area below threshold): {faces:?}")]
    DegenerateFaces { faces: Vec<usize> },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

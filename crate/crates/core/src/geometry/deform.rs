use crate::exec;
use crate::nets::{NetError, ShapeNet};

use super::mesh::Mesh;

/// Rows per inference chunk. Dense layers are row-independent, so chunking
/// does not change any output bit.
pub const INFERENCE_CHUNK: usize = 4096;

/// Runs the flow network over `points` (`n × 3`) in independent chunks.
pub fn flow_points(net: &ShapeNet, points: &[f64]) -> Result<Vec<f64>, NetError> {
    let chunks: Vec<&[f64]> = points.chunks(INFERENCE_CHUNK * 3).collect();
    let parts = exec::map_indexed(chunks.len(), |i| net.forward(chunks[i], false).map(|f| f.points));
    let mut out = Vec::with_capacity(points.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Replaces every vertex by its image under the flow; connectivity is
/// untouched and the domain positions are kept as canonical coordinates.
pub fn deform_mesh(net: &ShapeNet, domain: &Mesh) -> Result<Mesh, NetError> {
    let moved = flow_points(net, &domain.flat_vertices())?;
    let mut out = Mesh::from_flat(&moved, domain.faces.clone());
    out.canonical = Some(domain.vertices.clone());
    out.theta = domain.theta.clone();
    Ok(out)
}

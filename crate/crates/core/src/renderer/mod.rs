//! Camera model, differentiable soft rasterizer and hard z-buffer renderer.

mod camera;
mod hard;
mod pose;
mod soft;

use thiserror::Error;

use crate::autodiff::{AdError, Tensor, Var};
use crate::geometry::{vertex_normals_lenient, Mesh};

pub use camera::{
    determinant, mat_mul, mat_vec, rotation_angle_between, so3_exp, transpose, Camera, Light, LightMode, Mat3, Projection,
    IDENTITY,
};
pub use hard::{hard_render, HardRender};
pub use pose::{rigid_transform_var, so3_exp_var, world_to_camera_var};
pub use soft::{soft_render_plain, soft_render_var, Intrinsics, SoftInputs, SoftRasterConfig};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    BadCamera(String),
    #[error("invalid light: {0}")]
    BadLight(String),
    #[error("invalid rasterizer config: {0}")]
    BadConfig(String),
    #[error("invalid render input: {0}")]
    BadInput(String),
    #[error("cannot render an empty mesh")]
    EmptyMesh,
    #[error("non-finite value at pixel {pixel:?} (face {face:?})")]
    NonFinite { pixel: (usize, usize), face: Option<usize> },
    #[error(transparent)]
    Ad(#[from] AdError),
}

/// Untaped soft render of a view.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `H·W·3` linear RGB.
    pub image: Vec<f64>,
    /// `H·W` soft coverage.
    pub silhouette: Vec<f64>,
}

impl RenderOutput {
    fn from_rows(width: usize, height: usize, rows: &[f64]) -> Self {
        let mut image = Vec::with_capacity(width * height * 3);
        let mut silhouette = Vec::with_capacity(width * height);
        for px in rows.chunks_exact(4) {
            image.extend_from_slice(&px[..3]);
            silhouette.push(px[3]);
        }
        Self {
            width,
            height,
            image,
            silhouette,
        }
    }
}

/// Soft-renders a world-space mesh; `theta` holds five BRDF parameters per
/// vertex.
pub fn render(mesh: &Mesh, theta: &[[f64; 5]], cam: &Camera, light: &Light, cfg: &SoftRasterConfig) -> Result<RenderOutput, RenderError> {
    cam.validate()?;
    light.validate()?;
    let nv = mesh.vertices.len();
    if theta.len() != nv {
        return Err(RenderError::BadInput(format!("{} BRDF samples for {nv} vertices", theta.len())));
    }
    let normals = vertex_normals_lenient(&mesh.flat_vertices(), &mesh.faces);
    let verts: Vec<f64> = mesh.vertices.iter().flat_map(|&v| cam.world_to_camera(v)).collect();
    let normals: Vec<f64> = normals.iter().flat_map(|&n| mat_vec(&cam.rotation, n)).collect();
    let theta: Vec<f64> = theta.iter().flatten().copied().collect();
    let rows = soft_render_plain(
        &Tensor::matrix(nv, 3, verts)?,
        &Tensor::matrix(nv, 3, normals)?,
        &Tensor::matrix(nv, 5, theta)?,
        light.in_camera(cam),
        &mesh.faces,
        Intrinsics::from(cam),
        cfg,
    )?;
    Ok(RenderOutput::from_rows(cam.width, cam.height, &rows))
}

/// Mean squared difference between a soft silhouette and a binary mask.
pub fn silhouette_loss(silhouette: &[f64], mask: &[bool]) -> Result<f64, RenderError> {
    if silhouette.len() != mask.len() || mask.is_empty() {
        return Err(RenderError::BadInput(format!(
            "silhouette has {} pixels, mask {}",
            silhouette.len(),
            mask.len()
        )));
    }
    let sum: f64 = silhouette
        .iter()
        .zip(mask)
        .map(|(&s, &m)| (s - if m { 1.0 } else { 0.0 }).powi(2))
        .sum();
    Ok(sum / mask.len() as f64)
}

/// Taped [`silhouette_loss`]; `silhouette` is any tensor with one entry per
/// mask pixel.
pub fn silhouette_loss_var<'t>(silhouette: Var<'t>, mask: &[bool]) -> Result<Var<'t>, RenderError> {
    let n = silhouette.value().len();
    if n != mask.len() || n == 0 {
        return Err(RenderError::BadInput(format!("silhouette has {n} pixels, mask {}", mask.len())));
    }
    let target = Tensor::new(
        silhouette.shape(),
        mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
    )?;
    let t = silhouette.tape().constant(target);
    Ok(silhouette.sub(t)?.square().mean())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silhouette_loss_extremes() {
        assert_eq!(silhouette_loss(&[1.0, 0.0], &[true, false]).unwrap(), 0.0);
        assert_eq!(silhouette_loss(&[0.0, 0.0], &[true, true]).unwrap(), 1.0);
        assert!(silhouette_loss(&[0.0], &[true, false]).is_err());
    }

    #[test]
    fn taped_silhouette_loss_matches_plain() {
        let sil = [0.2, 0.9, 0.5, 0.0];
        let mask = [false, true, true, true];
        let tape = crate::autodiff::Tape::new();
        let v = tape.leaf(Tensor::vector(sil.to_vec()));
        let l = silhouette_loss_var(v, &mask).unwrap();
        assert!((l.item() - silhouette_loss(&sil, &mask).unwrap()).abs() < 1e-15);
    }
}

//! Photometric, flow-regularity and silhouette losses.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{CsrMatrix, Tensor, Var};
use crate::geometry::Mesh;

use super::TrainError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the flow regularizer.
    pub lambda_reg: f64,
    /// Laplacian weight inside the regularizer, in `[0, 1]`.
    pub alpha: f64,
    /// Weight of the silhouette term when masks are available.
    pub mask_weight: f64,
    /// Average the photometric error over pixels (true) or sum it.
    pub rgb_mean: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 0.01,
            alpha: 0.5,
            mask_weight: 0.0,
            rgb_mean: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lambda_reg >= 0.0) {
            return Err(TrainError::Config("lambda_reg must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TrainError::Config("alpha must lie in [0, 1]".into()));
        }
        if !(self.mask_weight >= 0.0) {
            return Err(TrainError::Config("mask weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Squared RGB error of one view, summed over channels and averaged (or
/// summed) over pixels. Both slices hold `H·W·3` values.
pub fn rgb_loss_view(pred: &[f64], obs: &[f64], mean: bool) -> Result<f64, TrainError> {
    if pred.len() != obs.len() || pred.len() % 3 != 0 {
        return Err(TrainError::Shape(format!("prediction has {} values, observation {}", pred.len(), obs.len())));
    }
    let sum: f64 = pred.iter().zip(obs).map(|(p, o)| (p - o) * (p - o)).sum();
    Ok(if mean { sum / (pred.len() / 3) as f64 } else { sum })
}

/// Sum of [`rgb_loss_view`] over views.
pub fn rgb_loss(pred: &[Vec<f64>], obs: &[Vec<f64>], mean: bool) -> Result<f64, TrainError> {
    if pred.len() != obs.len() {
        return Err(TrainError::Shape(format!("{} predicted views, {} observed", pred.len(), obs.len())));
    }
    pred.iter().zip(obs).map(|(p, o)| rgb_loss_view(p, o, mean)).sum()
}

/// Taped [`rgb_loss_view`] on a rendered `H·W × 4` tensor (the fourth
/// column, the silhouette, is ignored).
pub fn rgb_loss_var<'t>(rendered: Var<'t>, obs: &[f64], mean: bool) -> Result<Var<'t>, TrainError> {
    let pixels = rendered.value().dims2().filter(|d| d.1 == 4).map(|d| d.0);
    let Some(pixels) = pixels.filter(|&p| p * 3 == obs.len()) else {
        return Err(TrainError::Shape(format!(
            "rendered {:?} against {} observed values",
            rendered.shape(),
            obs.len()
        )));
    };
    let rgb = rendered.slice(1, 0, 3)?;
    let target = rendered.tape().constant(Tensor::matrix(pixels, 3, obs.to_vec())?);
    let sum = rgb.sub(target)?.square().sum();
    Ok(if mean { sum.mul_scalar(1.0 / pixels as f64) } else { sum })
}

/// `I − α·Δ` for the umbrella Laplacian `Δv_s = mean_{r ∈ N(s)} v_r − v_s`
/// over the mesh connectivity.
pub fn regularizer_operator(mesh: &Mesh, alpha: f64) -> CsrMatrix {
    let n = mesh.vertices.len();
    let nbrs = mesh.vertex_neighbors();
    let mut triplets = Vec::new();
    for (s, list) in nbrs.iter().enumerate() {
        triplets.push((s, s, 1.0 + if list.is_empty() { 0.0 } else { alpha }));
        for &r in list {
            triplets.push((s, r, -alpha / list.len() as f64));
        }
    }
    CsrMatrix::from_triplets(n, n, triplets)
}

/// Mean over steps and vertices of `‖(I − αΔ)V‖²` for the velocity at each
/// flow step (`n × 3` per step).
pub fn reg_loss(velocities: &[Vec<f64>], operator: &CsrMatrix) -> Result<f64, TrainError> {
    if velocities.is_empty() {
        return Err(TrainError::MissingTrajectory);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for v in velocities {
        if v.len() != operator.rows * 3 {
            return Err(TrainError::Shape(format!("velocity field has {} values for {} vertices", v.len(), operator.rows)));
        }
        total += operator.apply(v, 3).iter().map(|x| x * x).sum::<f64>();
        count += operator.rows;
    }
    Ok(total / count as f64)
}

/// Taped [`reg_loss`].
pub fn reg_loss_var<'t>(velocities: &[Var<'t>], operator: &Rc<CsrMatrix>) -> Result<Var<'t>, TrainError> {
    let Some(first) = velocities.first() else {
        return Err(TrainError::MissingTrajectory);
    };
    let mut total: Option<Var<'t>> = None;
    for &v in velocities {
        let r = v.spmm(Rc::clone(operator))?.square().sum();
        total = Some(match total {
            Some(t) => t.add(r)?,
            None => r,
        });
    }
    let count = (velocities.len() * first.shape()[0]) as f64;
    Ok(total.expect("non-empty").mul_scalar(1.0 / count))
}

/// `rgb + λ·reg + mask_weight·silhouette`.
pub fn total_loss(rgb: f64, reg: f64, silhouette: Option<f64>, cfg: &LossConfig) -> f64 {
    let mut l = rgb + cfg.lambda_reg * reg;
    if let Some(s) = silhouette {
        if cfg.mask_weight != 0.0 {
            l += cfg.mask_weight * s;
        }
    }
    l
}

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::geometry::{icosphere, Mesh};
use crate::nets::{BrdfNet, PosEncConfig, ShapeNet, BRDF_HIDDEN, SHAPE_HIDDEN};

use super::TrainError;

/// Network architecture knobs shared by both networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Euler steps of the shape flow.
    pub steps: usize,
    /// Number of positional-encoding frequencies `1..=n`.
    pub frequencies: usize,
    pub shape_hidden: Vec<usize>,
    pub brdf_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            steps: crate::nets::DEFAULT_STEPS,
            frequencies: 16,
            shape_hidden: SHAPE_HIDDEN.to_vec(),
            brdf_hidden: BRDF_HIDDEN.to_vec(),
        }
    }
}

/// Shape and reflectance networks trained together.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub shape: ShapeNet,
    pub brdf: BrdfNet,
}

/// Reconstructed surface: deformed mesh with per-vertex BRDF parameters.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub mesh: Mesh,
    pub theta: Vec<[f64; 5]>,
}

impl ModelState {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Self {
        let posenc = PosEncConfig::linear(cfg.frequencies);
        Self {
            shape: ShapeNet::with_layout(posenc.clone(), &cfg.shape_hidden, cfg.steps, seed),
            brdf: BrdfNet::with_layout(posenc, &cfg.brdf_hidden, seed),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.shape.validate()?;
        self.brdf.validate()?;
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = self.shape.mlp.tensor_names("shape");
        names.extend(self.brdf.mlp.tensor_names("brdf"));
        names
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut p = self.shape.mlp.tensors();
        p.extend(self.brdf.mlp.tensors());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.shape.mlp.tensors_mut();
        p.extend(self.brdf.mlp.tensors_mut());
        p
    }

    /// Flows a canonical mesh and evaluates the BRDF at its canonical
    /// vertices.
    pub fn reconstruct_domain(&self, domain: &Mesh) -> Result<Reconstruction, TrainError> {
        let mesh = crate::geometry::deform_mesh(&self.shape, domain)?;
        let theta = self
            .brdf
            .forward(&domain.flat_vertices())
            .chunks_exact(5)
            .map(|c| [c[0], c[1], c[2], c[3], c[4]])
            .collect();
        Ok(Reconstruction { mesh, theta })
    }

    /// Reconstruction on the unrotated icosphere of `level`.
    pub fn reconstruct(&self, level: u32) -> Result<Reconstruction, TrainError> {
        self.reconstruct_domain(&icosphere(level, None)?)
    }
}

/// Combines the shape network of `shape_model` with the reflectance network
/// of `brdf_model`.
pub fn swap_brdf(shape_model: &ModelState, brdf_model: &ModelState) -> Result<ModelState, TrainError> {
    if shape_model.brdf.posenc != brdf_model.brdf.posenc || shape_model.shape.posenc != brdf_model.shape.posenc {
        return Err(TrainError::Incompatible("positional encodings differ".into()));
    }
    let out = ModelState {
        shape: shape_model.shape.clone(),
        brdf: brdf_model.brdf.clone(),
    };
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            steps: 4,
            frequencies: 4,
            shape_hidden: vec![16, 16],
            brdf_hidden: vec![16],
        }
    }

    #[test]
    fn names_match_parameters() {
        let m = ModelState::new(&ModelConfig::default(), 3);
        assert_eq!(m.param_names().len(), m.params().len());
        assert_eq!(m.param_names()[0], "shape.0.weight");
        assert_eq!(m.param_names().last().unwrap(), "brdf.5.bias");
        m.validate().unwrap();
    }

    #[test]
    fn swapping_keeps_shape_and_is_an_involution() {
        let a = ModelState::new(&small(), 1);
        let b = ModelState::new(&small(), 2);
        let ab = swap_brdf(&a, &b).unwrap();
        assert_eq!(ab.shape, a.shape);
        assert_eq!(ab.brdf, b.brdf);
        assert_eq!(swap_brdf(&ab, &a).unwrap(), a);
        assert_eq!(swap_brdf(&a, &a).unwrap(), a);
        let ra = a.reconstruct(2).unwrap();
        let rab = ab.reconstruct(2).unwrap();
        assert_eq!(ra.mesh.vertices, rab.mesh.vertices);
        let other = ModelState::new(&ModelConfig { frequencies: 5, ..small() }, 2);
        assert!(swap_brdf(&a, &other).is_err());
    }
}

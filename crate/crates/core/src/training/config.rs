use serde::{Deserialize, Serialize};

use crate::renderer::SoftRasterConfig;

use super::{AdamConfig, LossConfig, ModelConfig, TrainError};

/// One coarse-to-fine stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub level: u32,
    /// Image resolution relative to the observations, `1/k` for integer `k`.
    pub image_scale: f64,
    pub epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineTarget {
    Cameras,
    Lights,
    Both,
}

impl RefineTarget {
    pub fn cameras(self) -> bool {
        matches!(self, Self::Cameras | Self::Both)
    }

    pub fn lights(self) -> bool {
        matches!(self, Self::Lights | Self::Both)
    }
}

/// Camera/light refinement during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    pub target: RefineTarget,
    pub lr: f64,
    /// First epoch (0-based) at which pose parameters move.
    pub start_epoch: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            target: RefineTarget::Cameras,
            lr: 1e-3,
            start_epoch: 0,
        }
    }
}

/// Every tunable of a training run; serialized into checkpoints and
/// reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub adam: AdamConfig,
    pub raster: SoftRasterConfig,
    /// Icosphere level when `stages` is empty.
    pub level: u32,
    /// Epoch count when `stages` is empty.
    pub epochs: usize,
    pub stages: Vec<Stage>,
    /// Randomly rotate the icosphere every epoch.
    pub rotate_domain: bool,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    pub refine: Option<RefineConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            adam: AdamConfig::default(),
            raster: SoftRasterConfig::default(),
            level: 3,
            epochs: 2000,
            stages: Vec::new(),
            rotate_domain: true,
            checkpoint_every: 0,
            refine: None,
        }
    }
}

impl RunConfig {
    /// Stages in effect: the explicit list, or one stage at full resolution.
    pub fn effective_stages(&self) -> Vec<Stage> {
        if self.stages.is_empty() {
            vec![Stage {
                level: self.level,
                image_scale: 1.0,
                epochs: self.epochs,
            }]
        } else {
            self.stages.clone()
        }
    }

    pub fn total_epochs(&self) -> usize {
        self.effective_stages().iter().map(|s| s.epochs).sum()
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.loss.validate()?;
        self.raster.validate()?;
        if !(self.adam.lr > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.model.steps == 0 || self.model.frequencies == 0 {
            return Err(TrainError::Config("steps and frequencies must be positive".into()));
        }
        let stages = self.effective_stages();
        for s in &stages {
            if s.level > crate::geometry::MAX_ICOSPHERE_LEVEL {
                return Err(TrainError::Config(format!("icosphere level {} too high", s.level)));
            }
            let k = 1.0 / s.image_scale;
            if !(s.image_scale > 0.0 && s.image_scale <= 1.0) || (k - k.round()).abs() > 1e-9 {
                return Err(TrainError::Config(format!("image scale {} is not 1/k", s.image_scale)));
            }
        }
        for w in stages.windows(2) {
            let finer = w[1].level > w[0].level || w[1].image_scale > w[0].image_scale;
            let coarser = w[1].level < w[0].level || w[1].image_scale < w[0].image_scale;
            if !finer || coarser {
                return Err(TrainError::Config("stages must strictly increase in resolution".into()));
            }
        }
        if let Some(r) = &self.refine {
            if !(r.lr > 0.0) {
                return Err(TrainError::Config("refinement learning rate must be positive".into()));
            }
        }
        Ok(())
    }
}

//! Losses, optimizer, checkpoints and the joint training loop.

mod adam;
pub mod checkpoint;
mod config;
mod loss;
mod model;
mod train;

use std::path::Path;

use thiserror::Error;

use crate::autodiff::AdError;
use crate::geometry::GeometryError;
use crate::nets::NetError;
use crate::renderer::RenderError;

pub use adam::{AdamConfig, AdamState};
pub use config::{RefineConfig, RefineTarget, RunConfig, Stage};
pub use loss::{
    reg_loss, reg_loss_var, regularizer_operator, rgb_loss, rgb_loss_var, rgb_loss_view, total_loss, LossConfig,
};
pub use model::{swap_brdf, ModelConfig, ModelState, Reconstruction};
pub use train::{
    metrics_row, refine_calibration, EpochMetrics, Evaluation, PoseReport, PoseState, TrainView, Trainer, METRICS_HEADER,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("regularizer needs the flow trajectory")]
    MissingTrajectory,
    #[error("non-finite gradient in {parameter}")]
    NonFiniteGradient { parameter: String },
    #[error("incompatible models: {0}")]
    Incompatible(String),
    #[error("loss diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Render(#[from] RenderError),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

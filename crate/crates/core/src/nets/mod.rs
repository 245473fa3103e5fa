//! Positional encoding, MLPs, the recurrent flow network for shape and the
//! reflectance network.

mod brdf_net;
mod flow;
mod mlp;
mod posenc;
mod shape_net;

pub use brdf_net::{
    squash, squash_var, BrdfNet, BrdfNetVars, BRDF_HIDDEN, BRDF_PARAMS, ROUGHNESS_MAX, ROUGHNESS_MIN,
};
pub use flow::{integrate, integrate_var, ConstantField, Flow, FlowStep, LinearField, VelocityField};
pub use mlp::{dense, Activation, Linear, Mlp, MlpVars};
pub use posenc::PosEncConfig;
pub use shape_net::{ShapeNet, ShapeNetVars, DEFAULT_STEPS, SHAPE_HIDDEN, SHAPE_OUTPUT_INIT_SCALE};

use thiserror::Error;

use crate::autodiff::AdError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("non-finite value during flow step {step}")]
    NonFinite { step: usize },
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ad(#[from] AdError),
}

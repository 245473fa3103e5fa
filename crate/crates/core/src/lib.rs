pub mod autodiff;
pub mod evaluation;
pub mod exec;
pub mod geometry;
pub mod nets;
pub mod reflectance;
pub mod renderer;
pub mod scene;
pub mod training;

//! Multi-view datasets: manifest, image files and synthetic ground truth.
//!
//! A dataset is a directory holding `manifest.json` and the files it
//! references by relative path. Manifest fields:
//!
//! - `version`: schema version, currently 1.
//! - `world_units`: free-form note on the unit of length.
//! - `views[]`: one entry per observation with
//!   - `image`: 8-bit RGB PNG,
//!   - `mask` (optional): 8-bit grayscale PNG, set where brighter than 127,
//!   - `camera_to_world`: 4×4 rigid transform, rows `[Rᵀ | c]`, last row
//!     `[0, 0, 0, 1]`; the camera looks along +z with the image y axis down,
//!   - `fx`, `fy`, `cx`, `cy`: pinhole intrinsics in pixels,
//!   - `width`, `height`: image resolution,
//!   - `light`: `{mode: collocated|point|directional, xyz}` with a world
//!     position for point lights and a unit world direction towards the
//!     light for directional ones,
//!   - `depth`, `normals` (optional, synthetic scenes): ground-truth camera
//!     depth as 16-bit PNG in thousandths of a unit and world normals as
//!     8-bit RGB encoding `(n + 1)/2`.
//! - `ground_truth` (optional): `{mesh}` path of the reference PLY.
//! - `generator` (optional): parameters that produced a synthetic scene.

pub mod image;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::renderer::{Camera, Light};
use crate::training::TrainView;

pub use synth::{
    generate_synthetic, GroundTruth, MaterialPreset, ShapePreset, SynthSpec, SyntheticScene, CAMERA_DISTANCE,
};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Image { path: String, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("unsupported manifest version {0}")]
    Version(u32),
    #[error("view {index}: {message}")]
    View { index: usize, message: String },
    #[error("{0} views given, training needs at least 2")]
    TooFewViews(usize),
    #[error("ground truth missing: {0}")]
    MissingGroundTruth(String),
    #[error(transparent)]
    Render(#[from] crate::renderer::RenderError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}

impl SceneError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    fn view(index: usize, message: impl Into<String>) -> Self {
        Self::View {
            index,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewEntry {
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    pub camera_to_world: [[f64; 4]; 4],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub light: Light,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normals: Option<String>,
}

impl ViewEntry {
    pub fn camera(&self) -> Camera {
        Camera::from_camera_to_world(
            &self.camera_to_world,
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
        )
    }

    pub fn from_camera(camera: &Camera, light: Light, image: String) -> Self {
        Self {
            image,
            mask: None,
            camera_to_world: camera.camera_to_world(),
            fx: camera.fx,
            fy: camera.fy,
            cx: camera.cx,
            cy: camera.cy,
            width: camera.width,
            height: camera.height,
            light,
            depth: None,
            normals: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub mesh: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    #[serde(default)]
    pub world_units: String,
    pub views: Vec<ViewEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<serde_json::Value>,
}

/// Validated dataset rooted at the manifest's directory. Images are read on
/// demand.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub cameras: Vec<Camera>,
}

/// Per-view ground-truth maps decoded from disk.
#[derive(Clone, Debug)]
pub struct GroundTruthMaps {
    pub depth: Vec<f64>,
    pub normals: Vec<[f64; 3]>,
    pub mask: Vec<bool>,
}

fn png_size(path: &Path) -> Result<(usize, usize), String> {
    let file = fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let reader = png::Decoder::new(std::io::BufReader::new(file))
        .read_info()
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let info = reader.info();
    Ok((info.width as usize, info.height as usize))
}

/// Reads and validates a manifest; `path` may also name its directory.
pub fn load_scene(path: &Path) -> Result<SceneDataset, SceneError> {
    let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&file).map_err(|e| SceneError::io(&file, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| SceneError::Manifest(e.to_string()))?;
    let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
    SceneDataset::new(root, manifest)
}

impl SceneDataset {
    /// Validates every view: rigid pose, positive intrinsics, sane light
    /// and referenced files at the declared resolution.
    pub fn new(root: PathBuf, manifest: Manifest) -> Result<Self, SceneError> {
        if manifest.version != MANIFEST_VERSION {
            return Err(SceneError::Version(manifest.version));
        }
        let mut cameras = Vec::with_capacity(manifest.views.len());
        for (k, v) in manifest.views.iter().enumerate() {
            let m = &v.camera_to_world;
            if m.iter().flatten().any(|x| !x.is_finite()) || m[3] != [0.0, 0.0, 0.0, 1.0] {
                return Err(SceneError::view(k, "camera_to_world is not a finite rigid transform"));
            }
            if v.width == 0 || v.height == 0 {
                return Err(SceneError::view(k, "empty resolution"));
            }
            let cam = v.camera();
            cam.validate().map_err(|e| SceneError::view(k, e.to_string()))?;
            v.light.validate().map_err(|e| SceneError::view(k, e.to_string()))?;
            let files = [Some(&v.image), v.mask.as_ref(), v.depth.as_ref(), v.normals.as_ref()];
            for rel in files.into_iter().flatten() {
                let (w, h) = png_size(&root.join(rel)).map_err(|e| SceneError::view(k, e))?;
                if (w, h) != (v.width, v.height) {
                    return Err(SceneError::view(
                        k,
                        format!("{rel} is {w}×{h}, camera declares {}×{}", v.width, v.height),
                    ));
                }
            }
            cameras.push(cam);
        }
        Ok(Self { root, manifest, cameras })
    }

    pub fn len(&self) -> usize {
        self.manifest.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.views.is_empty()
    }

    pub fn require_trainable(&self) -> Result<(), SceneError> {
        if self.len() < 2 {
            return Err(SceneError::TooFewViews(self.len()));
        }
        Ok(())
    }

    pub fn lights(&self) -> Vec<Light> {
        self.manifest.views.iter().map(|v| v.light).collect()
    }

    /// Decodes one view for training.
    pub fn load_view(&self, k: usize) -> Result<TrainView, SceneError> {
        let v = &self.manifest.views[k];
        let img = image::read_rgb(&self.root.join(&v.image))?;
        let mask = match &v.mask {
            Some(rel) => Some(image::read_mask(&self.root.join(rel))?.2),
            None => None,
        };
        Ok(TrainView {
            camera: self.cameras[k].clone(),
            light: v.light,
            image: img.data,
            mask,
        })
    }

    pub fn load_views(&self) -> Result<Vec<TrainView>, SceneError> {
        (0..self.len()).map(|k| self.load_view(k)).collect()
    }

    /// Decodes the ground-truth maps of view `k`.
    pub fn ground_truth_maps(&self, k: usize) -> Result<GroundTruthMaps, SceneError> {
        let v = &self.manifest.views[k];
        let (Some(d), Some(n)) = (&v.depth, &v.normals) else {
            return Err(SceneError::MissingGroundTruth(format!("view {k} has no depth or normal map")));
        };
        let depth = image::read_depth(&self.root.join(d))?.2;
        let normals = image::read_normals(&self.root.join(n))?.2;
        let mask = depth.iter().map(|&z| z > 0.0).collect();
        Ok(GroundTruthMaps { depth, normals, mask })
    }

    /// Every view paired with its decoded reference maps.
    pub fn eval_views(&self) -> Result<Vec<crate::evaluation::EvalView>, SceneError> {
        (0..self.len())
            .map(|k| {
                let v = self.load_view(k)?;
                let gt = self.ground_truth_maps(k)?;
                Ok(crate::evaluation::EvalView {
                    camera: v.camera,
                    light: v.light,
                    image: v.image,
                    depth: gt.depth,
                    normals: gt.normals,
                    mask: gt.mask,
                })
            })
            .collect()
    }

    /// Reference mesh of a synthetic scene.
    pub fn ground_truth_mesh(&self) -> Result<crate::geometry::Mesh, SceneError> {
        let gt = self
            .manifest
            .ground_truth
            .as_ref()
            .ok_or_else(|| SceneError::MissingGroundTruth("manifest lists no reference mesh".into()))?;
        Ok(crate::geometry::import_ply(&self.root.join(&gt.mesh))?.0)
    }

    /// Writes the manifest into `root`; referenced files must already exist
    /// there.
    pub fn save_manifest(&self) -> Result<(), SceneError> {
        save_manifest(&self.root, &self.manifest)
    }
}

pub fn save_manifest(dir: &Path, manifest: &Manifest) -> Result<(), SceneError> {
    fs::create_dir_all(dir).map_err(|e| SceneError::io(dir, e))?;
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| SceneError::Manifest(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| SceneError::io(&path, e))
}

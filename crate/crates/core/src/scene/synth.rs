//! Procedural scenes with known shape, reflectance and calibration.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{cross, export_ply, icosphere, norm, normalize, scale, Mesh, Vec3};
use crate::renderer::{hard_render, Camera, HardRender, Light, LightMode};
use crate::training::TrainView;

use super::image::{decode_unit, encode_unit, write_depth, write_mask, write_normals, write_rgb8};
use super::{save_manifest, GroundTruthEntry, Manifest, SceneDataset, SceneError, ViewEntry, MANIFEST_VERSION};

/// Distance of every camera from the origin.
pub const CAMERA_DISTANCE: f64 = 2.5;
const NEAR: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapePreset {
    Sphere,
    Ellipsoid,
    /// Sphere with a low-order spherical-harmonic radial displacement.
    Bumpy,
    /// Sphere carrying two interlaced materials.
    Striped,
    /// Six sharp lobes along the axes over a small core; star-shaped
    /// around the origin.
    Stress,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaterialPreset {
    Lambertian,
    Glossy,
    /// Alternating latitude bands of two materials.
    Striped,
}

macro_rules! text_enum {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($s => Ok(Self::$v),)+
                    _ => Err(format!("unknown preset {s:?}, expected one of: {}", [$($s),+].join(", "))),
                }
            }
        }
    };
}

text_enum!(ShapePreset, Sphere => "sphere", Ellipsoid => "ellipsoid", Bumpy => "bumpy", Striped => "striped", Stress => "stress");
text_enum!(MaterialPreset, Lambertian => "lambertian", Glossy => "glossy", Striped => "striped");

impl ShapePreset {
    pub fn default_material(self) -> MaterialPreset {
        match self {
            Self::Striped => MaterialPreset::Striped,
            _ => MaterialPreset::Glossy,
        }
    }

    /// Surface point for the unit direction `d`, before normalization.
    fn surface(self, d: Vec3) -> Vec3 {
        let [x, y, z] = d;
        match self {
            Self::Sphere | Self::Striped => d,
            Self::Ellipsoid => [x, 0.75 * y, 0.55 * z],
            Self::Bumpy => {
                let r = 1.0 + 0.12 * (1.5 * z * z - 0.5) + 0.1 * (x * x * x - 3.0 * x * y * y) + 0.08 * x * y + 0.06 * y * z;
                scale(d, r)
            }
            Self::Stress => {
                let f = x.powi(8) + y.powi(8) + z.powi(8);
                scale(d, 0.4 + 0.6 * f.sqrt())
            }
        }
    }
}

const MATERIAL_A: [f64; 5] = [0.8, 0.25, 0.15, 0.3, 0.35];
const MATERIAL_B: [f64; 5] = [0.15, 0.35, 0.8, 0.05, 0.6];
const STRIPE_BANDS: f64 = 8.0;

impl MaterialPreset {
    /// BRDF parameters at the unit direction `d` of the canonical sphere.
    pub fn theta(self, d: Vec3) -> [f64; 5] {
        match self {
            Self::Lambertian => [0.7, 0.7, 0.7, 0.0, 0.5],
            Self::Glossy => [0.6, 0.45, 0.35, 0.25, 0.3],
            Self::Striped => {
                let band = (((d[2] + 1.0) * STRIPE_BANDS / 2.0).floor() as i64).min(STRIPE_BANDS as i64 - 1);
                if band.rem_euclid(2) == 0 {
                    MATERIAL_A
                } else {
                    MATERIAL_B
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub shape: ShapePreset,
    pub material: MaterialPreset,
    pub views: usize,
    pub width: usize,
    pub height: usize,
    pub light: LightMode,
    pub seed: u64,
    /// Subdivision level of the reference mesh.
    pub level: u32,
}

impl SynthSpec {
    pub fn new(shape: ShapePreset, views: usize, resolution: usize, light: LightMode, seed: u64) -> Self {
        Self {
            shape,
            material: shape.default_material(),
            views,
            width: resolution,
            height: resolution,
            light,
            seed,
            level: 5,
        }
    }
}

/// Reference data of a synthetic scene.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    /// Reference surface; `theta` and `canonical` are filled in.
    pub mesh: Mesh,
    pub theta: Vec<[f64; 5]>,
    pub depth: Vec<Vec<f64>>,
    pub normals: Vec<Vec<Vec3>>,
    pub masks: Vec<Vec<bool>>,
    /// Unquantized renders.
    pub images: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Reference mesh of a preset, normalized so its farthest vertex lies on
    /// the unit sphere.
    pub fn mesh(shape: ShapePreset, material: MaterialPreset, level: u32) -> Result<Mesh, SceneError> {
        let mut mesh = icosphere(level, None)?;
        let dirs = mesh.vertices.clone();
        let mut pts: Vec<Vec3> = dirs.iter().map(|&d| shape.surface(d)).collect();
        let (lo, hi) = Mesh::new(pts.clone(), Vec::new()).bounding_box();
        let center = [0, 1, 2].map(|i| 0.5 * (lo[i] + hi[i]));
        let radius = pts.iter().map(|p| norm(crate::geometry::sub(*p, center))).fold(0.0, f64::max);
        for p in &mut pts {
            *p = scale(crate::geometry::sub(*p, center), 1.0 / radius);
        }
        mesh.vertices = pts;
        mesh.theta = Some(dirs.iter().map(|&d| material.theta(d)).collect());
        mesh.canonical = Some(dirs);
        Ok(mesh)
    }

    /// Hard render of the reference surface.
    pub fn render(&self, cam: &Camera, light: &Light) -> Result<HardRender, SceneError> {
        Ok(hard_render(&self.mesh, &self.theta, cam, light, NEAR, [0.0; 3])?)
    }
}

/// A generated dataset held in memory.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SynthSpec,
    /// Observations quantized to 8 bits, with masks.
    pub views: Vec<TrainView>,
    pub ground_truth: GroundTruth,
}

fn random_direction(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let s = (1.0 - z * z).sqrt();
    [s * phi.cos(), s * phi.sin(), z]
}

/// Pinhole camera on the view sphere looking at the origin, with the unit
/// ball filling about 80% of the image.
pub fn orbit_camera(direction: Vec3, width: usize, height: usize) -> Camera {
    let eye = scale(normalize(direction), CAMERA_DISTANCE);
    let up = if normalize(direction)[1].abs() > 0.99 { [0.0, 0.0, 1.0] } else { [0.0, 1.0, 0.0] };
    let half = (1.0 / CAMERA_DISTANCE).asin() / 0.8;
    let f = 0.5 * width.min(height) as f64 / half.tan();
    Camera::look_at(eye, [0.0; 3], up, f, f, width, height)
}

fn light_for(mode: LightMode, cam: &Camera) -> Light {
    let center = cam.center();
    // camera axes in world coordinates
    let right = cam.rotation[0];
    let down = cam.rotation[1];
    match mode {
        LightMode::Collocated => Light {
            mode: LightMode::Collocated,
            xyz: center,
        },
        LightMode::Point => Light::point([0, 1, 2].map(|i| center[i] + 0.6 * right[i] - 0.4 * down[i])),
        LightMode::Directional => {
            let toward = normalize(center);
            let side = normalize(cross(toward, down));
            Light::directional([0, 1, 2].map(|i| toward[i] + 0.3 * side[i]))
        }
    }
}

/// Renders `spec.views` randomly placed views of a preset with the hard
/// reference rasterizer and quantizes them to 8 bits.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticScene, SceneError> {
    if spec.views == 0 || spec.width == 0 || spec.height == 0 {
        return Err(SceneError::Manifest("synthetic scene needs views and a resolution".into()));
    }
    let mesh = GroundTruth::mesh(spec.shape, spec.material, spec.level)?;
    let theta = mesh.theta.clone().expect("set by GroundTruth::mesh");
    let mut gt = GroundTruth {
        mesh,
        theta,
        depth: Vec::new(),
        normals: Vec::new(),
        masks: Vec::new(),
        images: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut views = Vec::with_capacity(spec.views);
    for _ in 0..spec.views {
        let cam = orbit_camera(random_direction(&mut rng), spec.width, spec.height);
        let light = light_for(spec.light, &cam);
        let r = gt.render(&cam, &light)?;
        views.push(TrainView {
            camera: cam,
            light,
            image: r.image.iter().map(|&x| decode_unit(encode_unit(x))).collect(),
            mask: Some(r.mask.clone()),
        });
        gt.depth.push(r.depth);
        gt.normals.push(r.normals);
        gt.masks.push(r.mask);
        gt.images.push(r.image);
    }
    Ok(SyntheticScene {
        spec: spec.clone(),
        views,
        ground_truth: gt,
    })
}

impl SyntheticScene {
    /// Views paired with their unquantized reference maps.
    pub fn eval_views(&self) -> Vec<crate::evaluation::EvalView> {
        let gt = &self.ground_truth;
        self.views
            .iter()
            .enumerate()
            .map(|(k, v)| crate::evaluation::EvalView {
                camera: v.camera.clone(),
                light: v.light,
                image: v.image.clone(),
                depth: gt.depth[k].clone(),
                normals: gt.normals[k].clone(),
                mask: gt.masks[k].clone(),
            })
            .collect()
    }

    /// Writes images, masks, reference maps, the reference mesh and the
    /// manifest into `dir`.
    pub fn write(&self, dir: &Path) -> Result<SceneDataset, SceneError> {
        let (w, h) = (self.spec.width, self.spec.height);
        let mut entries = Vec::with_capacity(self.views.len());
        for (k, v) in self.views.iter().enumerate() {
            let image = format!("images/view_{k:03}.png");
            let mask = format!("masks/view_{k:03}.png");
            let depth = format!("gt/depth_{k:03}.png");
            let normals = format!("gt/normals_{k:03}.png");
            let bytes: Vec<u8> = v.image.iter().map(|&x| encode_unit(x)).collect();
            write_rgb8(&dir.join(&image), w, h, &bytes)?;
            write_mask(&dir.join(&mask), w, h, v.mask.as_ref().expect("synthetic views carry masks"))?;
            write_depth(&dir.join(&depth), w, h, &self.ground_truth.depth[k])?;
            write_normals(&dir.join(&normals), w, h, &self.ground_truth.normals[k])?;
            let mut e = ViewEntry::from_camera(&v.camera, v.light, image);
            e.mask = Some(mask);
            e.depth = Some(depth);
            e.normals = Some(normals);
            entries.push(e);
        }
        std::fs::create_dir_all(dir.join("gt")).map_err(|e| SceneError::io(dir, e))?;
        export_ply(&self.ground_truth.mesh, &dir.join("gt/mesh.ply"))?;
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            world_units: "object normalized to the unit ball".into(),
            views: entries,
            ground_truth: Some(GroundTruthEntry {
                mesh: "gt/mesh.ply".into(),
            }),
            generator: Some(serde_json::to_value(&self.spec).map_err(|e| SceneError::Manifest(e.to_string()))?),
        };
        save_manifest(dir, &manifest)?;
        SceneDataset::new(dir.to_path_buf(), manifest)
    }
}

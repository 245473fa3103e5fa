use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::autodiff::{CsrMatrix, Tape, Tensor, Var};
use crate::geometry::{icosphere, vertex_normals_var, Mesh};
use crate::renderer::{
    rotation_angle_between, silhouette_loss_var, so3_exp_var, soft_render_var, world_to_camera_var, Camera, Intrinsics,
    Light, LightMode, SoftInputs,
};

use super::loss::{reg_loss_var, regularizer_operator, rgb_loss_var};
use super::{checkpoint, AdamConfig, AdamState, ModelState, RunConfig, Stage, TrainError};

/// One calibrated observation.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainView {
    pub camera: Camera,
    pub light: Light,
    /// `H·W·3` linear RGB in `[0, 1]`.
    pub image: Vec<f64>,
    pub mask: Option<Vec<bool>>,
}

impl TrainView {
    /// Box-filtered copy at `1/k` resolution; mask pixels survive when at
    /// least half the block is set.
    pub fn downsampled(&self, k: usize) -> Result<Self, TrainError> {
        if k == 1 {
            return Ok(self.clone());
        }
        let (w, h) = (self.camera.width, self.camera.height);
        if w % k != 0 || h % k != 0 {
            return Err(TrainError::Config(format!("{w}×{h} image is not divisible by {k}")));
        }
        let (nw, nh) = (w / k, h / k);
        let mut image = vec![0.0; nw * nh * 3];
        let mut counts = vec![0usize; nw * nh];
        for y in 0..h {
            for x in 0..w {
                let o = (y / k) * nw + x / k;
                for c in 0..3 {
                    image[3 * o + c] += self.image[3 * (y * w + x) + c];
                }
                if self.mask.as_ref().is_some_and(|m| m[y * w + x]) {
                    counts[o] += 1;
                }
            }
        }
        let area = (k * k) as f64;
        image.iter_mut().for_each(|v| *v /= area);
        Ok(Self {
            camera: self.camera.scaled(1.0 / k as f64),
            light: self.light,
            image,
            mask: self.mask.as_ref().map(|_| counts.iter().map(|&c| 2 * c >= k * k).collect()),
        })
    }

    fn check(&self, index: usize) -> Result<(), TrainError> {
        let px = self.camera.width * self.camera.height;
        if self.image.len() != px * 3 || self.mask.as_ref().is_some_and(|m| m.len() != px) {
            return Err(TrainError::Shape(format!("view {index}: image or mask does not match the camera resolution")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub stage: usize,
    pub level: u32,
    pub rgb: f64,
    pub reg: f64,
    pub silhouette: f64,
    pub total: f64,
}

/// Loss of one epoch with gradients for every model tensor, in
/// [`ModelState::param_names`] order, and for the pose state when refinement
/// is active.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: EpochMetrics,
    pub gradients: Vec<Tensor>,
    pub pose_gradients: Option<Vec<Tensor>>,
}

/// Per-view pose and light corrections with their optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseState {
    /// Axis-angle increment composed before each initial rotation.
    pub rotation: Vec<Tensor>,
    /// Offset added to each initial camera center.
    pub center: Vec<Tensor>,
    /// Offset added to each point-light position.
    pub light: Vec<Tensor>,
    pub adam: AdamState,
}

impl PoseState {
    pub fn new(views: usize, lr: f64) -> Self {
        let zeros = || (0..views).map(|_| Tensor::vector(vec![0.0; 3])).collect::<Vec<_>>();
        let mut s = Self {
            rotation: zeros(),
            center: zeros(),
            light: zeros(),
            adam: AdamState::new(AdamConfig { lr, ..AdamConfig::default() }, &[]),
        };
        let refs: Vec<&Tensor> = s.params();
        s.adam = AdamState::new(AdamConfig { lr, ..AdamConfig::default() }, &refs);
        s
    }

    pub fn views(&self) -> usize {
        self.rotation.len()
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.views())
            .flat_map(|k| [format!("pose.{k}.rotation"), format!("pose.{k}.center"), format!("pose.{k}.light")])
            .collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        (0..self.views()).flat_map(|k| [&self.rotation[k], &self.center[k], &self.light[k]]).collect()
    }

    fn params_and_adam(&mut self) -> (Vec<&mut Tensor>, &mut AdamState) {
        let params = self
            .rotation
            .iter_mut()
            .zip(self.center.iter_mut())
            .zip(self.light.iter_mut())
            .flat_map(|((r, c), l)| [r, c, l])
            .collect();
        (params, &mut self.adam)
    }

    /// Camera with the current correction applied.
    pub fn camera(&self, k: usize, base: &Camera) -> Camera {
        let w = self.rotation[k].data();
        let rot = crate::renderer::mat_mul(&crate::renderer::so3_exp([w[0], w[1], w[2]]), &base.rotation);
        let c0 = base.center();
        let d = self.center[k].data();
        let center = [c0[0] + d[0], c0[1] + d[1], c0[2] + d[2]];
        let t = crate::renderer::mat_vec(&rot, center).map(|v| -v);
        Camera {
            rotation: rot,
            translation: t,
            ..base.clone()
        }
    }

    pub fn light(&self, k: usize, base: &Light) -> Light {
        match base.mode {
            LightMode::Point => {
                let d = self.light[k].data();
                Light::point([base.xyz[0] + d[0], base.xyz[1] + d[1], base.xyz[2] + d[2]])
            }
            _ => *base,
        }
    }
}

/// Change of each view's calibration relative to its initial value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    pub rotation_deg: Vec<f64>,
    pub center_shift: Vec<f64>,
    pub light_shift: Vec<f64>,
}

struct LevelData {
    base: Mesh,
    faces: Rc<Vec<[usize; 3]>>,
    operator: Rc<CsrMatrix>,
}

/// Training state: model, optimizers, progress and metrics.
pub struct Trainer {
    pub config: RunConfig,
    pub model: ModelState,
    pub adam: AdamState,
    pub poses: Option<PoseState>,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
    levels: BTreeMap<u32, LevelData>,
}

fn domain_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64 + 1)
}

fn sum_vars<'t>(acc: Option<Var<'t>>, x: Var<'t>) -> Result<Option<Var<'t>>, TrainError> {
    Ok(Some(match acc {
        Some(a) => a.add(x)?,
        None => x,
    }))
}

impl Trainer {
    /// Fresh model for a scene with `views` views.
    pub fn new(config: RunConfig, views: usize) -> Result<Self, TrainError> {
        config.validate()?;
        let model = ModelState::new(&config.model, config.seed);
        let adam = AdamState::new(config.adam.clone(), &model.params());
        let poses = config.refine.as_ref().map(|r| PoseState::new(views, r.lr));
        Ok(Self {
            config,
            model,
            adam,
            poses,
            epoch: 0,
            history: Vec::new(),
            levels: BTreeMap::new(),
        })
    }

    pub(crate) fn from_parts(
        config: RunConfig,
        model: ModelState,
        adam: AdamState,
        poses: Option<PoseState>,
        epoch: usize,
        history: Vec<EpochMetrics>,
    ) -> Self {
        Self {
            config,
            model,
            adam,
            poses,
            epoch,
            history,
            levels: BTreeMap::new(),
        }
    }

    /// Index and description of the stage containing `epoch`.
    pub fn stage_of(&self, epoch: usize) -> (usize, Stage) {
        let stages = self.config.effective_stages();
        let mut start = 0;
        for (i, s) in stages.iter().enumerate() {
            if epoch < start + s.epochs {
                return (i, s.clone());
            }
            start += s.epochs;
        }
        let last = stages.len() - 1;
        (last, stages[last].clone())
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.total_epochs()
    }

    /// Turns on calibration refinement from the current epoch on.
    pub fn enable_refinement(&mut self, refine: super::RefineConfig, views: usize) {
        if self.poses.as_ref().is_none_or(|p| p.views() != views) {
            self.poses = Some(PoseState::new(views, refine.lr));
        }
        self.config.refine = Some(super::RefineConfig {
            start_epoch: refine.start_epoch.max(self.epoch),
            ..refine
        });
    }

    fn level(&mut self, level: u32) -> Result<&LevelData, TrainError> {
        if !self.levels.contains_key(&level) {
            let base = icosphere(level, None)?;
            let operator = Rc::new(regularizer_operator(&base, self.config.loss.alpha));
            self.levels.insert(
                level,
                LevelData {
                    faces: Rc::new(base.faces.clone()),
                    base,
                    operator,
                },
            );
        }
        Ok(&self.levels[&level])
    }

    fn domain(&mut self, level: u32, epoch: usize) -> Result<(Mesh, Rc<Vec<[usize; 3]>>, Rc<CsrMatrix>), TrainError> {
        let rotate = self.config.rotate_domain;
        let seed = self.config.seed;
        let data = self.level(level)?;
        let mesh = if rotate {
            icosphere(level, Some(domain_seed(seed, epoch)))?
        } else {
            data.base.clone()
        };
        Ok((mesh, Rc::clone(&data.faces), Rc::clone(&data.operator)))
    }

    /// Calibration currently used for each view.
    pub fn cameras(&self, views: &[TrainView]) -> Vec<Camera> {
        views
            .iter()
            .enumerate()
            .map(|(k, v)| match &self.poses {
                Some(p) if self.config.refine.as_ref().is_some_and(|r| r.target.cameras()) => p.camera(k, &v.camera),
                _ => v.camera.clone(),
            })
            .collect()
    }

    pub fn lights(&self, views: &[TrainView]) -> Vec<Light> {
        views
            .iter()
            .enumerate()
            .map(|(k, v)| match &self.poses {
                Some(p) if self.config.refine.as_ref().is_some_and(|r| r.target.lights()) => p.light(k, &v.light),
                _ => v.light,
            })
            .collect()
    }

    pub fn pose_report(&self, views: &[TrainView]) -> PoseReport {
        let cams = self.cameras(views);
        let lights = self.lights(views);
        let dist = |a: [f64; 3], b: [f64; 3]| crate::geometry::norm(crate::geometry::sub(a, b));
        PoseReport {
            rotation_deg: views
                .iter()
                .zip(&cams)
                .map(|(v, c)| rotation_angle_between(&v.camera.rotation, &c.rotation).to_degrees())
                .collect(),
            center_shift: views.iter().zip(&cams).map(|(v, c)| dist(v.camera.center(), c.center())).collect(),
            light_shift: views.iter().zip(&lights).map(|(v, l)| dist(v.light.xyz, l.xyz)).collect(),
        }
    }

    /// One joint optimizer step over all views.
    pub fn run_epoch(&mut self, views: &[TrainView]) -> Result<EpochMetrics, TrainError> {
        let eval = self.evaluate(views)?;
        let names = self.model.param_names();
        if let (Some(p), Some(full)) = (&mut self.poses, &eval.pose_gradients) {
            let pose_names = p.names();
            let (mut params, adam) = p.params_and_adam();
            adam.step(&mut params, full, &pose_names)?;
        }
        let mut params = self.model.params_mut();
        self.adam.step(&mut params, &eval.gradients, &names)?;
        self.epoch += 1;
        self.history.push(eval.metrics.clone());
        Ok(eval.metrics)
    }

    /// One calibration-only step: poses move, the networks and the epoch
    /// counter do not.
    pub fn step_poses(&mut self, views: &[TrainView]) -> Result<EpochMetrics, TrainError> {
        let eval = self.evaluate(views)?;
        if let (Some(p), Some(full)) = (&mut self.poses, &eval.pose_gradients) {
            let pose_names = p.names();
            let (mut params, adam) = p.params_and_adam();
            adam.step(&mut params, full, &pose_names)?;
        }
        Ok(eval.metrics)
    }

    /// Loss and gradients of the next epoch without touching any state.
    ///
    /// Fails with [`TrainError::Diverged`] on a non-finite loss and with
    /// [`TrainError::NonFiniteGradient`] naming the first bad parameter.
    pub fn evaluate(&mut self, views: &[TrainView]) -> Result<Evaluation, TrainError> {
        if views.is_empty() {
            return Err(TrainError::Config("no training views".into()));
        }
        for (k, v) in views.iter().enumerate() {
            v.check(k)?;
        }
        let (stage_idx, stage) = self.stage_of(self.epoch);
        let k = (1.0 / stage.image_scale).round() as usize;
        let scaled: Vec<TrainView> = views.iter().map(|v| v.downsampled(k)).collect::<Result<_, _>>()?;
        let (domain, faces, operator) = self.domain(stage.level, self.epoch)?;
        let refine = self.config.refine.clone().filter(|r| self.epoch >= r.start_epoch);
        if refine.is_some() && self.poses.as_ref().is_none_or(|p| p.views() != views.len()) {
            return Err(TrainError::Config("pose state does not match the number of views".into()));
        }
        let refine_cams = refine.as_ref().is_some_and(|r| r.target.cameras());
        let refine_lights = refine.as_ref().is_some_and(|r| r.target.lights());
        let cfg = &self.config;
        let tape = Tape::new();
        let shape = self.model.shape.leaves(&tape);
        let brdf = self.model.brdf.leaves(&tape);
        let n = domain.vertices.len();
        let pts = tape.constant(Tensor::matrix(n, 3, domain.flat_vertices())?);
        let (verts, velocities) = shape.forward(pts)?;
        let theta = brdf.forward(pts)?;
        let normals = vertex_normals_var(verts, &faces)?;

        let mut pose_leaves: Vec<Var> = Vec::new();
        let mut rgb: Option<Var> = None;
        let mut sil: Option<Var> = None;
        for (k, view) in scaled.iter().enumerate() {
            let cam = &view.camera;
            let base_rot = tape.constant(Tensor::matrix(3, 3, cam.rotation.iter().flatten().copied().collect())?);
            let base_center = tape.constant(Tensor::vector(cam.center().to_vec()));
            let poses = self.poses.as_ref();
            let (rot, center) = if refine_cams {
                let p = poses.expect("checked above");
                let w = tape.leaf(p.rotation[k].clone());
                let d = tape.leaf(p.center[k].clone());
                pose_leaves.extend([w, d]);
                (so3_exp_var(w)?.matmul(base_rot)?, base_center.add(d)?)
            } else {
                (base_rot, base_center)
            };
            let verts_cam = world_to_camera_var(verts, rot, center)?;
            let normals_cam = normals.matmul(rot.transpose()?)?;
            let (light, directional) = match view.light.mode {
                LightMode::Collocated => (tape.constant(Tensor::vector(vec![0.0; 3])), false),
                LightMode::Point => {
                    let mut lw = tape.constant(Tensor::matrix(1, 3, view.light.xyz.to_vec())?);
                    if refine_lights {
                        let off = tape.leaf(poses.expect("checked above").light[k].clone());
                        pose_leaves.push(off);
                        lw = lw.add(off.reshape(&[1, 3])?)?;
                    }
                    (world_to_camera_var(lw, rot, center)?.reshape(&[3])?, false)
                }
                LightMode::Directional => {
                    let d = tape.constant(Tensor::matrix(1, 3, view.light.xyz.to_vec())?);
                    (d.matmul(rot.transpose()?)?.reshape(&[3])?, true)
                }
            };
            let img = soft_render_var(
                SoftInputs {
                    vertices: verts_cam,
                    normals: normals_cam,
                    theta,
                    light,
                    directional,
                },
                Rc::clone(&faces),
                Intrinsics::from(cam),
                &cfg.raster,
            )?;
            rgb = sum_vars(rgb, rgb_loss_var(img, &view.image, cfg.loss.rgb_mean)?)?;
            if cfg.loss.mask_weight > 0.0 {
                if let Some(mask) = &view.mask {
                    sil = sum_vars(sil, silhouette_loss_var(img.slice(1, 3, 4)?, mask)?)?;
                }
            }
        }
        let rgb = rgb.expect("at least one view");
        let reg = reg_loss_var(&velocities, &operator)?;
        let mut total = rgb.add(reg.mul_scalar(cfg.loss.lambda_reg))?;
        if let Some(s) = sil {
            total = total.add(s.mul_scalar(cfg.loss.mask_weight))?;
        }
        let metrics = EpochMetrics {
            epoch: self.epoch,
            stage: stage_idx,
            level: stage.level,
            rgb: rgb.item(),
            reg: reg.item(),
            silhouette: sil.map_or(0.0, |s| s.item()),
            total: total.item(),
        };
        if !metrics.total.is_finite() {
            return Err(TrainError::Diverged { epoch: self.epoch });
        }
        tape.backward(total)?;
        let mut leaves = shape.mlp.vars();
        leaves.extend(brdf.mlp.vars());
        let grads: Vec<Tensor> = leaves.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        let pose_grads: Vec<Tensor> = pose_leaves.iter().map(|&v| tape.grad_or_zeros(v)).collect();
        drop(tape);

        let names = self.model.param_names();
        for (g, name) in grads.iter().zip(&names) {
            if !g.all_finite() {
                return Err(TrainError::NonFiniteGradient { parameter: name.clone() });
            }
        }
        let mut pose_gradients = None;
        if let (Some(p), true) = (&self.poses, refine.is_some()) {
            let mut full: Vec<Tensor> = p.params().iter().map(|t| Tensor::zeros_like(t)).collect();
            let mut it = pose_grads.into_iter();
            for k in 0..p.views() {
                if refine_cams {
                    full[3 * k] = it.next().expect("rotation gradient");
                    full[3 * k + 1] = it.next().expect("center gradient");
                }
                if refine_lights && views[k].light.mode == LightMode::Point {
                    full[3 * k + 2] = it.next().expect("light gradient");
                }
            }
            if let Some((_, name)) = full.iter().zip(p.names()).find(|(g, _)| !g.all_finite()) {
                return Err(TrainError::NonFiniteGradient { parameter: name });
            }
            pose_gradients = Some(full);
        }
        Ok(Evaluation {
            metrics,
            gradients: grads,
            pose_gradients,
        })
    }

    /// Renders every view with the current model on the unrotated domain of
    /// the current stage; `H·W·3` per view.
    pub fn predict(&self, views: &[TrainView]) -> Result<Vec<Vec<f64>>, TrainError> {
        let (_, stage) = self.stage_of(self.epoch.saturating_sub(1));
        let rec = self.model.reconstruct(stage.level)?;
        let cams = self.cameras(views);
        let lights = self.lights(views);
        cams.iter()
            .zip(&lights)
            .map(|(c, l)| Ok(crate::renderer::render(&rec.mesh, &rec.theta, c, l, &self.config.raster)?.image))
            .collect()
    }

    /// Trains until the schedule is complete, writing `metrics.csv`,
    /// `timing.csv` and checkpoints into `out` when given.
    ///
    /// On divergence the last good state is saved as `last_good.ckpt`
    /// before the error is returned.
    pub fn train(&mut self, views: &[TrainView], out: Option<&Path>) -> Result<(), TrainError> {
        if views.len() < 2 {
            return Err(TrainError::Config(format!("training needs at least 2 views, got {}", views.len())));
        }
        let mut logs = match out {
            Some(dir) => Some(Logs::open(dir, &self.history)?),
            None => None,
        };
        let total = self.config.total_epochs();
        while self.epoch < total {
            let started = Instant::now();
            let m = match self.run_epoch(views) {
                Ok(m) => m,
                Err(e) => {
                    if let Some(dir) = out {
                        checkpoint::save(&dir.join("last_good.ckpt"), self)?;
                    }
                    return Err(e);
                }
            };
            let secs = started.elapsed().as_secs_f64();
            if m.epoch % 10 == 0 || self.epoch == total {
                log::info!("epoch {} rgb {:.6e} reg {:.6e} total {:.6e} ({secs:.2}s)", m.epoch, m.rgb, m.reg, m.total);
            }
            if let (Some(logs), Some(dir)) = (&mut logs, out) {
                logs.append(&m, secs)?;
                let every = self.config.checkpoint_every;
                if every > 0 && self.epoch % every == 0 && self.epoch < total {
                    checkpoint::save(&dir.join("checkpoint.ckpt"), self)?;
                }
            }
        }
        if let Some(dir) = out {
            checkpoint::save(&dir.join("checkpoint.ckpt"), self)?;
        }
        Ok(())
    }
}

pub const METRICS_HEADER: &str = "epoch,stage,level,rgb,reg,silhouette,total";

pub fn metrics_row(m: &EpochMetrics) -> String {
    format!(
        "{},{},{},{:e},{:e},{:e},{:e}",
        m.epoch, m.stage, m.level, m.rgb, m.reg, m.silhouette, m.total
    )
}

struct Logs {
    metrics: BufWriter<File>,
    timing: BufWriter<File>,
}

impl Logs {
    fn open(dir: &Path, history: &[EpochMetrics]) -> Result<Self, TrainError> {
        fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        let mpath = dir.join("metrics.csv");
        let mut metrics = BufWriter::new(File::create(&mpath).map_err(|e| TrainError::io(&mpath, e))?);
        writeln!(metrics, "{METRICS_HEADER}").map_err(|e| TrainError::io(&mpath, e))?;
        for m in history {
            writeln!(metrics, "{}", metrics_row(m)).map_err(|e| TrainError::io(&mpath, e))?;
        }
        metrics.flush().map_err(|e| TrainError::io(&mpath, e))?;
        let tpath = dir.join("timing.csv");
        let fresh = !tpath.exists() || history.is_empty();
        let file = fs::OpenOptions::new()
            .create(true)
            .append(!history.is_empty())
            .write(true)
            .truncate(history.is_empty())
            .open(&tpath)
            .map_err(|e| TrainError::io(&tpath, e))?;
        let mut timing = BufWriter::new(file);
        if fresh {
            writeln!(timing, "epoch,seconds").map_err(|e| TrainError::io(&tpath, e))?;
        }
        Ok(Self { metrics, timing })
    }

    fn append(&mut self, m: &EpochMetrics, secs: f64) -> Result<(), TrainError> {
        let io = |e| TrainError::io(Path::new("metrics.csv"), e);
        writeln!(self.metrics, "{}", metrics_row(m)).map_err(io)?;
        self.metrics.flush().map_err(io)?;
        writeln!(self.timing, "{},{secs:.4}", m.epoch).map_err(io)?;
        self.timing.flush().map_err(io)?;
        Ok(())
    }
}

/// Refines cameras and/or lights of a trained model for `epochs` steps with
/// the networks held fixed, and reports how far each calibration moved.
///
/// Joint refinement during training is configured through
/// [`RunConfig::refine`](super::RunConfig) instead.
pub fn refine_calibration(
    trainer: &mut Trainer,
    views: &[TrainView],
    refine: super::RefineConfig,
    epochs: usize,
) -> Result<PoseReport, TrainError> {
    trainer.enable_refinement(refine, views.len());
    for _ in 0..epochs {
        trainer.step_poses(views)?;
    }
    Ok(trainer.pose_report(views))
}

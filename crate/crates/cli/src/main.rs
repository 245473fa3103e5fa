//! Command-line front end: synthesize scenes, train, render, export and
//! evaluate reconstructions.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Deserialize;

use ringflow::evaluation::{error_heatmap, evaluate};
use ringflow::geometry::{export_obj, export_ply};
use ringflow::renderer::{render, Camera, Light, LightMode};
use ringflow::scene::{self, image, load_scene, save_manifest, MaterialPreset, ShapePreset, SynthSpec, ViewEntry};
use ringflow::training::{
    checkpoint, refine_calibration, swap_brdf, ModelState, RefineTarget, RunConfig, Stage, Trainer,
};

#[derive(Parser)]
#[command(name = "ringflow", version, about = "Multi-view shape and reflectance recovery")]
struct Cli {
    /// Directory that relative paths are resolved against.
    #[arg(long, global = true, default_value = ".")]
    workdir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset with reference maps.
    Synth(SynthArgs),
    /// Train shape and reflectance networks on a dataset.
    Train(TrainArgs),
    /// Render a checkpoint from new viewpoints or lights.
    Render(RenderArgs),
    /// Export the reconstructed mesh.
    Export(ExportArgs),
    /// Score a checkpoint against reference maps.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LightArg {
    Collocated,
    Point,
    Directional,
}

impl From<LightArg> for LightMode {
    fn from(l: LightArg) -> Self {
        match l {
            LightArg::Collocated => LightMode::Collocated,
            LightArg::Point => LightMode::Point,
            LightArg::Directional => LightMode::Directional,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// sphere, ellipsoid, bumpy, striped or stress.
    #[arg(long)]
    preset: ShapePreset,
    /// lambertian, glossy or striped; defaults to the preset's own.
    #[arg(long)]
    material: Option<MaterialPreset>,
    #[arg(long)]
    views: usize,
    /// Square image resolution in pixels.
    #[arg(long)]
    res: usize,
    #[arg(long, value_enum, default_value = "collocated")]
    light: LightArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subdivision level of the reference mesh.
    #[arg(long, default_value_t = 5)]
    level: u32,
    #[arg(long, default_value = "scene")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// JSON file with any subset of the run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Continue from a checkpoint; its configuration is kept, except that
    /// `--epochs` may extend a single-stage schedule.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Euler steps of the shape flow.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    mask_weight: Option<f64>,
    /// Coarse-to-fine schedule, `level:scale:epochs` separated by commas.
    #[arg(long)]
    stages: Option<String>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Keep the canonical icosphere fixed instead of rotating it per epoch.
    #[arg(long)]
    no_rotate: bool,
    /// Refine calibration jointly with the networks.
    #[arg(long)]
    refine_poses: bool,
    #[arg(long, value_enum, default_value = "cameras")]
    refine_target: TargetArg,
    #[arg(long)]
    refine_lr: Option<f64>,
    #[arg(long)]
    refine_start: Option<usize>,
    /// Refine calibration for this many steps after training, networks fixed.
    #[arg(long)]
    refine_after: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetArg {
    Cameras,
    Lights,
    Both,
}

impl From<TargetArg> for RefineTarget {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Cameras => RefineTarget::Cameras,
            TargetArg::Lights => RefineTarget::Lights,
            TargetArg::Both => RefineTarget::Both,
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset manifest or JSON list of cameras.
    #[arg(long)]
    view_file: PathBuf,
    /// JSON list of lights, one per view or a single shared one.
    #[arg(long)]
    light_file: Option<PathBuf>,
    /// Take the reflectance network from another checkpoint.
    #[arg(long)]
    swap_brdf: Option<PathBuf>,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long, default_value = "renders")]
    out: PathBuf,
    /// Also write raw little-endian f64 images.
    #[arg(long)]
    raw: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Obj,
    Ply,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    level: u32,
    #[arg(long, value_enum)]
    format: Format,
    #[arg(long)]
    swap_brdf: Option<PathBuf>,
    /// Output file; defaults to `mesh_l<level>.<format>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long)]
    level: Option<u32>,
    #[arg(long, default_value = "eval")]
    out: PathBuf,
    /// Write prediction | reference | error heatmap PNGs.
    #[arg(long)]
    error_maps: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let wd = cli.workdir;
    match cli.command {
        Command::Synth(a) => synth(&wd, a),
        Command::Train(a) => train(&wd, a),
        Command::Render(a) => render_cmd(&wd, a),
        Command::Export(a) => export(&wd, a),
        Command::Eval(a) => eval(&wd, a),
    }
}

fn synth(wd: &Path, a: SynthArgs) -> Result<()> {
    let mut spec = SynthSpec::new(a.preset, a.views, a.res, a.light.into(), a.seed);
    spec.material = a.material.unwrap_or(spec.material);
    spec.level = a.level;
    let out = wd.join(&a.out);
    let scene = scene::generate_synthetic(&spec)?;
    scene.write(&out)?;
    info!("wrote {} views to {}", spec.views, out.display());
    Ok(())
}

fn parse_stages(text: &str) -> Result<Vec<Stage>> {
    text.split(',')
        .map(|s| {
            let parts: Vec<&str> = s.trim().split(':').collect();
            let [level, scale, epochs] = parts.as_slice() else {
                bail!("stage {s:?} is not level:scale:epochs");
            };
            Ok(Stage {
                level: level.parse().context("stage level")?,
                image_scale: scale.parse().context("stage scale")?,
                epochs: epochs.parse().context("stage epochs")?,
            })
        })
        .collect()
}

/// Default, then config file, then flags.
fn run_config(wd: &Path, a: &TrainArgs) -> Result<RunConfig> {
    let mut cfg = match &a.config {
        Some(p) => {
            let path = wd.join(p);
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($flag:expr, $field:expr) => {
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    set!(a.epochs, cfg.epochs);
    set!(a.level, cfg.level);
    set!(a.seed, cfg.seed);
    set!(a.lr, cfg.adam.lr);
    set!(a.steps, cfg.model.steps);
    set!(a.lambda, cfg.loss.lambda_reg);
    set!(a.alpha, cfg.loss.alpha);
    set!(a.sigma, cfg.raster.sigma);
    set!(a.gamma, cfg.raster.gamma);
    set!(a.mask_weight, cfg.loss.mask_weight);
    set!(a.checkpoint_every, cfg.checkpoint_every);
    if let Some(s) = &a.stages {
        cfg.stages = parse_stages(s)?;
    }
    if a.no_rotate {
        cfg.rotate_domain = false;
    }
    if a.refine_poses {
        let mut r = cfg.refine.clone().unwrap_or_default();
        r.target = a.refine_target.into();
        set!(a.refine_lr, r.lr);
        set!(a.refine_start, r.start_epoch);
        cfg.refine = Some(r);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_raw(path: &Path, data: &[f64]) -> Result<()> {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn train(wd: &Path, a: TrainArgs) -> Result<()> {
    let dataset = load_scene(&wd.join(&a.scene))?;
    dataset.require_trainable()?;
    let views = dataset.load_views()?;
    let out = wd.join(&a.out);
    let mut trainer = match &a.resume {
        Some(p) => {
            let mut t = checkpoint::load(&wd.join(p))?;
            if let Some(e) = a.epochs {
                if !t.config.stages.is_empty() {
                    bail!("--epochs cannot extend a multi-stage schedule");
                }
                t.config.epochs = e;
            }
            info!("resuming at epoch {}", t.epoch);
            t
        }
        None => Trainer::new(run_config(wd, &a)?, views.len())?,
    };
    let config_json = serde_json::to_string_pretty(&trainer.config)?;
    info!("configuration:\n{config_json}");
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.json"), &config_json)?;
    trainer.train(&views, Some(&out))?;

    if let Some(epochs) = a.refine_after {
        let mut r = trainer.config.refine.clone().unwrap_or_default();
        r.target = a.refine_target.into();
        if let Some(lr) = a.refine_lr {
            r.lr = lr;
        }
        let report = refine_calibration(&mut trainer, &views, r, epochs)?;
        checkpoint::save(&out.join("checkpoint.ckpt"), &trainer)?;
        fs::write(out.join("pose_report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    if trainer.poses.is_some() {
        write_refined_scene(&dataset, &trainer, &views, &out)?;
    }

    let preds = trainer.predict(&views)?;
    let pdir = out.join("predictions");
    fs::create_dir_all(&pdir)?;
    for (k, (p, v)) in preds.iter().zip(&views).enumerate() {
        image::write_rgb(&pdir.join(format!("view_{k:03}.png")), v.camera.width, v.camera.height, p)?;
        write_raw(&pdir.join(format!("view_{k:03}.f64")), p)?;
    }
    let last = trainer.history.last().map(|m| m.total).unwrap_or(f64::NAN);
    info!("finished {} epochs, final loss {last:.6e}", trainer.epoch);
    Ok(())
}

fn write_refined_scene(dataset: &scene::SceneDataset, trainer: &Trainer, views: &[ringflow::training::TrainView], out: &Path) -> Result<()> {
    let cams = trainer.cameras(views);
    let lights = trainer.lights(views);
    let mut manifest = dataset.manifest.clone();
    let root = fs::canonicalize(&dataset.root)?;
    for ((e, c), l) in manifest.views.iter_mut().zip(&cams).zip(&lights) {
        let light = if e.light.mode == LightMode::Collocated {
            Light {
                mode: LightMode::Collocated,
                xyz: c.center(),
            }
        } else {
            *l
        };
        let mut fresh = ViewEntry::from_camera(c, light, root.join(&e.image).display().to_string());
        fresh.mask = e.mask.as_ref().map(|m| root.join(m).display().to_string());
        fresh.depth = e.depth.as_ref().map(|m| root.join(m).display().to_string());
        fresh.normals = e.normals.as_ref().map(|m| root.join(m).display().to_string());
        *e = fresh;
    }
    if let Some(gt) = &mut manifest.ground_truth {
        gt.mesh = root.join(&gt.mesh).display().to_string();
    }
    save_manifest(&out.join("refined_scene"), &manifest)?;
    fs::write(out.join("pose_changes.json"), serde_json::to_string_pretty(&trainer.pose_report(views))?)?;
    Ok(())
}

/// Model from a checkpoint, optionally with another checkpoint's BRDF.
fn load_model(wd: &Path, ckpt: &Path, swap: Option<&PathBuf>) -> Result<(Trainer, ModelState)> {
    let t = checkpoint::load(&wd.join(ckpt))?;
    let model = match swap {
        Some(other) => swap_brdf(&t.model, &checkpoint::load(&wd.join(other))?.model)?,
        None => t.model.clone(),
    };
    Ok((t, model))
}

fn final_level(t: &Trainer) -> u32 {
    t.config.effective_stages().last().map_or(t.config.level, |s| s.level)
}

#[derive(Deserialize)]
struct CameraEntry {
    camera_to_world: [[f64; 4]; 4],
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    #[serde(default)]
    light: Option<Light>,
}

fn read_views(path: &Path) -> Result<Vec<(Camera, Option<Light>)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let list = match value.get("views") {
        Some(v) => v.clone(),
        None => value,
    };
    let entries: Vec<CameraEntry> = serde_json::from_value(list).context("view file must list cameras")?;
    entries
        .into_iter()
        .enumerate()
        .map(|(k, e)| {
            let cam = Camera::from_camera_to_world(&e.camera_to_world, e.fx, e.fy, e.cx, e.cy, e.width, e.height);
            cam.validate().with_context(|| format!("view {k}"))?;
            Ok((cam, e.light))
        })
        .collect()
}

fn render_cmd(wd: &Path, a: RenderArgs) -> Result<()> {
    let (t, model) = load_model(wd, &a.ckpt, a.swap_brdf.as_ref())?;
    let views = read_views(&wd.join(&a.view_file))?;
    let lights: Option<Vec<Light>> = match &a.light_file {
        Some(p) => {
            let path = wd.join(p);
            let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let l: Vec<Light> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if l.len() != 1 && l.len() != views.len() {
                bail!("{} lights for {} views", l.len(), views.len());
            }
            Some(l)
        }
        None => None,
    };
    let level = a.level.unwrap_or_else(|| final_level(&t));
    let rec = model.reconstruct(level)?;
    let out = wd.join(&a.out);
    fs::create_dir_all(&out)?;
    for (k, (cam, own)) in views.iter().enumerate() {
        let light = match &lights {
            Some(l) => l[if l.len() == 1 { 0 } else { k }],
            None => own.unwrap_or_else(Light::collocated),
        };
        let r = render(&rec.mesh, &rec.theta, cam, &light, &t.config.raster)?;
        image::write_rgb(&out.join(format!("render_{k:03}.png")), r.width, r.height, &r.image)?;
        if a.raw {
            write_raw(&out.join(format!("render_{k:03}.f64")), &r.image)?;
        }
    }
    let meta = serde_json::json!({
        "checkpoint": a.ckpt,
        "swap_brdf": a.swap_brdf,
        "level": level,
        "config": t.config,
    });
    fs::write(out.join("render.json"), serde_json::to_string_pretty(&meta)?)?;
    info!("rendered {} views into {}", views.len(), out.display());
    Ok(())
}

fn export(wd: &Path, a: ExportArgs) -> Result<()> {
    let (t, model) = load_model(wd, &a.ckpt, a.swap_brdf.as_ref())?;
    let rec = model.reconstruct(a.level)?;
    let mut mesh = rec.mesh;
    mesh.theta = Some(rec.theta);
    let ext = match a.format {
        Format::Obj => "obj",
        Format::Ply => "ply",
    };
    let path = wd.join(a.out.unwrap_or_else(|| PathBuf::from(format!("mesh_l{}.{ext}", a.level))));
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    match a.format {
        Format::Obj => export_obj(&mesh, &path)?,
        Format::Ply => export_ply(&mesh, &path)?,
    }
    let meta = serde_json::json!({ "checkpoint": a.ckpt, "level": a.level, "config": t.config });
    fs::write(path.with_extension(format!("{ext}.json")), serde_json::to_string_pretty(&meta)?)?;
    info!("exported {} vertices to {}", mesh.vertices.len(), path.display());
    Ok(())
}

fn eval(wd: &Path, a: EvalArgs) -> Result<()> {
    let (t, model) = load_model(wd, &a.ckpt, None)?;
    let dataset = load_scene(&wd.join(&a.scene))?;
    let inputs = dataset.eval_views().context("input scene")?;
    let heldout = match &a.heldout {
        Some(h) => load_scene(&wd.join(h))?.eval_views().context("held-out scene")?,
        None => Vec::new(),
    };
    let diag = dataset.ground_truth_mesh().context("input scene")?.bbox_diagonal();
    let level = a.level.unwrap_or_else(|| final_level(&t));
    let rec = model.reconstruct(level)?;
    let (report, scored) = evaluate(&rec.mesh, &rec.theta, &inputs, &heldout, diag)?;
    let out = wd.join(&a.out);
    report.write(&out, &serde_json::to_value(&t.config)?)?;
    if a.error_maps {
        for s in &scored {
            let m = &s.metrics;
            let v = match m.set {
                ringflow::evaluation::ViewSet::Input => &inputs[m.index],
                ringflow::evaluation::ViewSet::Heldout => &heldout[m.index],
            };
            let (w, h) = (v.camera.width, v.camera.height);
            let heat = error_heatmap(&s.normal_map.per_pixel, &s.valid, 30.0);
            let mut grid = vec![0.0; 3 * w * h * 3];
            for y in 0..h {
                for (panel, src) in [&s.render.image, &v.image, &heat].into_iter().enumerate() {
                    let dst = 3 * (y * 3 * w + panel * w);
                    grid[dst..dst + 3 * w].copy_from_slice(&src[3 * y * w..3 * (y + 1) * w]);
                }
            }
            let name = format!("{}_{:03}.png", if m.set == ringflow::evaluation::ViewSet::Input { "input" } else { "heldout" }, m.index);
            image::write_rgb(&out.join("error_maps").join(name), 3 * w, h, &grid)?;
        }
    }
    print!("{}", report.summary());
    Ok(())
}

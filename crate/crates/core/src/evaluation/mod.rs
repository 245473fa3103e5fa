//! Reconstruction metrics: normal and depth error against reference maps,
//! and image PSNR.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::geometry::{dot, Mesh, Vec3};
use crate::renderer::{hard_render, Camera, HardRender, Light, RenderError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no valid pixels to compare")]
    EmptyMask,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Mean and median over a set of per-pixel errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::EmptyMask);
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Ok(Self {
            mean: values.iter().sum::<f64>() / n as f64,
            median,
            count: n,
        })
    }
}

/// Per-pixel errors (zero outside the mask) with their summary.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMap {
    pub per_pixel: Vec<f64>,
    pub summary: Summary,
}

fn masked<T: Copy>(pred: &[T], gt: &[T], mask: &[bool], err: impl Fn(T, T) -> f64) -> Result<ErrorMap, EvalError> {
    if pred.len() != gt.len() || pred.len() != mask.len() {
        return Err(EvalError::Shape(format!(
            "maps of {} and {} pixels with a mask of {}",
            pred.len(),
            gt.len(),
            mask.len()
        )));
    }
    let per_pixel: Vec<f64> = (0..pred.len()).map(|i| if mask[i] { err(pred[i], gt[i]) } else { 0.0 }).collect();
    let valid: Vec<f64> = (0..pred.len()).filter(|&i| mask[i]).map(|i| per_pixel[i]).collect();
    Ok(ErrorMap {
        summary: Summary::of(&valid)?,
        per_pixel,
    })
}

/// Angle in degrees between unit normals, `acos(clamp(a·b, −1, 1))`.
pub fn normal_error(pred: &[Vec3], gt: &[Vec3], mask: &[bool]) -> Result<ErrorMap, EvalError> {
    masked(pred, gt, mask, |a, b| dot(a, b).clamp(-1.0, 1.0).acos().to_degrees())
}

/// `100·|d_pred − d_gt| / bbox_diag`, in percent of the bounding-box
/// diagonal.
pub fn depth_error(pred: &[f64], gt: &[f64], mask: &[bool], bbox_diag: f64) -> Result<ErrorMap, EvalError> {
    if bbox_diag <= 0.0 || !bbox_diag.is_finite() {
        return Err(EvalError::Shape(format!("bounding-box diagonal {bbox_diag}")));
    }
    masked(pred, gt, mask, |a, b| 100.0 * (a - b).abs() / bbox_diag)
}

/// `10·log10(1/MSE)` over every pixel and channel; identical images give
/// `f64::INFINITY`.
pub fn psnr(pred: &[f64], gt: &[f64]) -> Result<f64, EvalError> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(EvalError::Shape(format!("{} vs {} values", pred.len(), gt.len())));
    }
    let mse = pred.iter().zip(gt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / pred.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Blue-to-red ramp of `values / max`, black outside the mask; `H·W·3`.
pub fn error_heatmap(values: &[f64], mask: &[bool], max: f64) -> Vec<f64> {
    values
        .iter()
        .zip(mask)
        .flat_map(|(&v, &m)| {
            if !m {
                return [0.0; 3];
            }
            let t = (v / max).clamp(0.0, 1.0);
            [t, 1.0 - (2.0 * t - 1.0).abs(), 1.0 - t]
        })
        .collect()
}

/// One view to score: calibration, observed image and reference maps.
#[derive(Clone, Debug)]
pub struct EvalView {
    pub camera: Camera,
    pub light: Light,
    pub image: Vec<f64>,
    pub depth: Vec<f64>,
    pub normals: Vec<Vec3>,
    pub mask: Vec<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewSet {
    Input,
    Heldout,
}

impl ViewSet {
    fn name(self) -> &'static str {
        match self {
            Self::Input => "input",
            Self::Heldout => "heldout",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub set: ViewSet,
    pub index: usize,
    pub normal: Summary,
    pub depth: Summary,
    pub psnr: f64,
}

/// Aggregate over a set of views: errors pooled over all valid pixels and
/// the mean per-view PSNR.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub normal: Summary,
    pub depth: Summary,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    pub input: Option<Aggregate>,
    pub heldout: Option<Aggregate>,
    /// Every view of both sets.
    pub all: Aggregate,
    pub bbox_diag: f64,
}

/// Renders and scores one view; also returns the render and error maps.
pub struct ScoredView {
    pub metrics: ViewMetrics,
    pub render: HardRender,
    pub normal_map: ErrorMap,
    pub depth_map: ErrorMap,
    pub valid: Vec<bool>,
}

/// Scores a reconstruction at one view. Valid pixels lie inside both the
/// predicted and the reference silhouette.
pub fn score_view(
    mesh: &Mesh,
    theta: &[[f64; 5]],
    view: &EvalView,
    set: ViewSet,
    index: usize,
    bbox_diag: f64,
) -> Result<ScoredView, EvalError> {
    let render = hard_render(mesh, theta, &view.camera, &view.light, 0.1, [0.0; 3])?;
    if render.mask.len() != view.mask.len() || view.image.len() != render.image.len() {
        return Err(EvalError::Shape(format!("view {index}: reference maps do not match the camera")));
    }
    let valid: Vec<bool> = render.mask.iter().zip(&view.mask).map(|(&a, &b)| a && b).collect();
    let normal_map = normal_error(&render.normals, &view.normals, &valid)?;
    let depth_map = depth_error(&render.depth, &view.depth, &valid, bbox_diag)?;
    let metrics = ViewMetrics {
        set,
        index,
        normal: normal_map.summary,
        depth: depth_map.summary,
        psnr: psnr(&render.image, &view.image)?,
    };
    Ok(ScoredView {
        metrics,
        render,
        normal_map,
        depth_map,
        valid,
    })
}

fn aggregate(scored: &[&ScoredView]) -> Result<Aggregate, EvalError> {
    let pool = |pick: fn(&ScoredView) -> &ErrorMap| -> Vec<f64> {
        scored
            .iter()
            .flat_map(|s| {
                let map = pick(s);
                s.valid.iter().zip(&map.per_pixel).filter(|(v, _)| **v).map(|(_, e)| *e).collect::<Vec<_>>()
            })
            .collect()
    };
    let psnrs: Vec<f64> = scored.iter().map(|s| s.metrics.psnr).collect();
    Ok(Aggregate {
        normal: Summary::of(&pool(|s| &s.normal_map))?,
        depth: Summary::of(&pool(|s| &s.depth_map))?,
        psnr: psnrs.iter().sum::<f64>() / psnrs.len() as f64,
    })
}

/// Scores a reconstruction on input and held-out views; `bbox_diag` comes
/// from the reference mesh.
pub fn evaluate(
    mesh: &Mesh,
    theta: &[[f64; 5]],
    inputs: &[EvalView],
    heldout: &[EvalView],
    bbox_diag: f64,
) -> Result<(EvalReport, Vec<ScoredView>), EvalError> {
    let tasks: Vec<(ViewSet, usize, &EvalView)> = inputs
        .iter()
        .enumerate()
        .map(|(i, v)| (ViewSet::Input, i, v))
        .chain(heldout.iter().enumerate().map(|(i, v)| (ViewSet::Heldout, i, v)))
        .collect();
    if tasks.is_empty() {
        return Err(EvalError::EmptyMask);
    }
    let scored: Vec<ScoredView> = exec::map_indexed(tasks.len(), |t| {
        let (set, i, v) = tasks[t];
        score_view(mesh, theta, v, set, i, bbox_diag)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let of = |set: ViewSet| -> Result<Option<Aggregate>, EvalError> {
        let sel: Vec<&ScoredView> = scored.iter().filter(|s| s.metrics.set == set).collect();
        if sel.is_empty() {
            Ok(None)
        } else {
            aggregate(&sel).map(Some)
        }
    };
    let report = EvalReport {
        views: scored.iter().map(|s| s.metrics.clone()).collect(),
        input: of(ViewSet::Input)?,
        heldout: of(ViewSet::Heldout)?,
        all: aggregate(&scored.iter().collect::<Vec<_>>())?,
        bbox_diag,
    };
    Ok((report, scored))
}

pub const REPORT_HEADER: &str =
    "set,view,normal_mean_deg,normal_median_deg,depth_mean_pct,depth_median_pct,psnr_db,valid_pixels";

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for v in &self.views {
            let _ = writeln!(
                out,
                "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                v.set.name(),
                v.index,
                v.normal.mean,
                v.normal.median,
                v.depth.mean,
                v.depth.median,
                v.psnr,
                v.normal.count
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let mut line = |name: &str, a: &Aggregate| {
            let _ = writeln!(
                out,
                "{name:8} normal {:.3}° mean / {:.3}° median, depth {:.4}% mean / {:.4}% median, PSNR {:.2} dB",
                a.normal.mean, a.normal.median, a.depth.mean, a.depth.median, a.psnr
            );
        };
        if let Some(a) = &self.input {
            line("input", a);
        }
        if let Some(a) = &self.heldout {
            line("heldout", a);
        }
        line("all", &self.all);
        out
    }

    /// Writes `eval.csv`, `summary.txt` and `report.json`; `provenance` is
    /// embedded in the text and JSON files.
    pub fn write(&self, dir: &Path, provenance: &serde_json::Value) -> Result<(), EvalError> {
        let io = |p: &Path, e| EvalError::Io {
            path: p.display().to_string(),
            source: e,
        };
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        let csv = dir.join("eval.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| io(&csv, e))?;
        let summary = dir.join("summary.txt");
        let text = format!(
            "{}bounding-box diagonal {:.6}\nconfig {}\n",
            self.summary(),
            self.bbox_diag,
            provenance
        );
        fs::write(&summary, text).map_err(|e| io(&summary, e))?;
        let json = dir.join("report.json");
        let body = serde_json::json!({ "report": self, "config": provenance });
        fs::write(&json, serde_json::to_string_pretty(&body).expect("serializable report"))
            .map_err(|e| io(&json, e))
    }
}

//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `RINGCKPT`, a little-endian `u32` version, a
//! little-endian `u64` header length, a JSON header, then every tensor as
//! little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

use super::{AdamState, EpochMetrics, ModelState, PoseState, RunConfig, TrainError, Trainer};

pub const MAGIC: &[u8; 8] = b"RINGCKPT";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    epoch: usize,
    history: Vec<EpochMetrics>,
    adam_step: u64,
    pose_views: Option<usize>,
    pose_adam_step: u64,
    tensors: Vec<TensorEntry>,
}

fn named_tensors(t: &Trainer) -> Vec<(String, &Tensor)> {
    let names = t.model.param_names();
    let params = t.model.params();
    let mut out: Vec<(String, &Tensor)> = names.iter().cloned().zip(params).collect();
    out.extend(names.iter().zip(&t.adam.m).map(|(n, m)| (format!("adam.m.{n}"), m)));
    out.extend(names.iter().zip(&t.adam.v).map(|(n, v)| (format!("adam.v.{n}"), v)));
    if let Some(p) = &t.poses {
        let pn = p.names();
        out.extend(pn.iter().cloned().zip(p.params()));
        out.extend(pn.iter().zip(&p.adam.m).map(|(n, m)| (format!("adam.m.{n}"), m)));
        out.extend(pn.iter().zip(&p.adam.v).map(|(n, v)| (format!("adam.v.{n}"), v)));
    }
    out
}

/// Serializes the full training state.
pub fn to_bytes(t: &Trainer) -> Result<Vec<u8>, TrainError> {
    let tensors = named_tensors(t);
    let header = Header {
        config: t.config.clone(),
        epoch: t.epoch,
        history: t.history.clone(),
        adam_step: t.adam.step,
        pose_views: t.poses.as_ref().map(|p| p.views()),
        pose_adam_step: t.poses.as_ref().map_or(0, |p| p.adam.step),
        tensors: tensors
            .iter()
            .map(|(name, x)| TensorEntry {
                name: name.clone(),
                shape: x.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    let mut out = Vec::with_capacity(20 + json.len() + 8 * tensors.iter().map(|(_, x)| x.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, x) in &tensors {
        for v in x.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Trainer, TrainError> {
    let bad = |m: &str| TrainError::Checkpoint(m.to_string());
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(TrainError::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| TrainError::Checkpoint(e.to_string()))?;
    header.config.validate()?;

    let model = ModelState::new(&header.config.model, header.config.seed);
    let mut adam = AdamState::new(header.config.adam.clone(), &model.params());
    adam.step = header.adam_step;
    let poses = header.pose_views.map(|n| {
        let lr = header.config.refine.as_ref().map_or(1e-3, |r| r.lr);
        let mut p = PoseState::new(n, lr);
        p.adam.step = header.pose_adam_step;
        p
    });
    let mut t = Trainer::from_parts(header.config, model, adam, poses, header.epoch, header.history);

    let mut slots: std::collections::HashMap<String, &mut Tensor> = std::collections::HashMap::new();
    let names = t.model.param_names();
    let Trainer { model, adam, poses, .. } = &mut t;
    for (n, x) in names.iter().zip(model.params_mut()) {
        slots.insert(n.clone(), x);
    }
    for (n, x) in names.iter().zip(adam.m.iter_mut()) {
        slots.insert(format!("adam.m.{n}"), x);
    }
    for (n, x) in names.iter().zip(adam.v.iter_mut()) {
        slots.insert(format!("adam.v.{n}"), x);
    }
    if let Some(p) = poses {
        let pn = p.names();
        let PoseState {
            rotation,
            center,
            light,
            adam,
        } = p;
        let params = rotation
            .iter_mut()
            .zip(center.iter_mut())
            .zip(light.iter_mut())
            .flat_map(|((r, c), l)| [r, c, l]);
        for (n, x) in pn.iter().zip(params) {
            slots.insert(n.clone(), x);
        }
        for (n, x) in pn.iter().zip(adam.m.iter_mut()) {
            slots.insert(format!("adam.m.{n}"), x);
        }
        for (n, x) in pn.iter().zip(adam.v.iter_mut()) {
            slots.insert(format!("adam.v.{n}"), x);
        }
    }
    if slots.len() != header.tensors.len() {
        return Err(TrainError::Checkpoint(format!(
            "expected {} tensors, file lists {}",
            slots.len(),
            header.tensors.len()
        )));
    }
    let mut offset = 20 + hlen;
    for entry in &header.tensors {
        let slot = slots
            .get_mut(&entry.name)
            .ok_or_else(|| TrainError::Checkpoint(format!("unknown tensor {}", entry.name)))?;
        if slot.shape() != entry.shape.as_slice() {
            return Err(TrainError::Checkpoint(format!("tensor {} has shape {:?}", entry.name, entry.shape)));
        }
        let n = slot.len();
        let raw = bytes.get(offset..offset + 8 * n).ok_or_else(|| bad("truncated tensor data"))?;
        for (dst, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        offset += 8 * n;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    drop(slots);
    t.model.validate()?;
    Ok(t)
}

pub fn save(path: &Path, t: &Trainer) -> Result<(), TrainError> {
    let bytes = to_bytes(t)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| TrainError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| TrainError::io(path, e))
}

pub fn load(path: &Path) -> Result<Trainer, TrainError> {
    let bytes = fs::read(path).map_err(|e| TrainError::io(path, e))?;
    from_bytes(&bytes)
}

//! Policy interface and a nearest-neighbor chunked behavior-cloning learner.
//!
//! Every frame of every training demo becomes a key: its proprioception and
//! an 8×8 pooled grayscale image descriptor, z-scored with training-set
//! statistics. The value is a reference to the next `chunk_size` actions of
//! that demo. Prediction returns the chunk of the nearest key; ties go to the
//! lowest demo id, then the lowest frame index.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use thiserror::Error;

use crate::demo::{Action, Demonstration};
use crate::render::{render_scene, Image, Scene};
use crate::sim::{World, WorldState};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("cannot fit on an empty dataset")]
    EmptyDataset,
    #[error("policy has not been fitted")]
    NotFitted,
    #[error("demos disagree on feature dimension ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("bad demonstration: {0}")]
    Demo(#[from] crate::demo::DemoError),
    #[error("policy file: {0}")]
    File(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerConfig {
    pub chunk_size: usize,
    /// Side length of the pooled image grid.
    pub descriptor_cells: u32,
    /// Remove each descriptor's own mean and contrast before z-scoring, so
    /// that global lighting changes do not dominate the distance.
    pub normalize_descriptor: bool,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig { chunk_size: 50, descriptor_cells: 8, normalize_descriptor: true }
    }
}

/// Raw (unscaled) feature vector of one observation.
pub fn features(cfg: &LearnerConfig, proprio: &[f64], image: &Image) -> Vec<f64> {
    let mut d = image.pooled_gray(cfg.descriptor_cells);
    if cfg.normalize_descriptor {
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 1e-12 { sd } else { 1.0 };
        d.iter_mut().for_each(|v| *v = (*v - mean) / sd);
    }
    let mut f = proprio.to_vec();
    f.extend(d);
    f
}

/// Anything that maps an observation to a chunk of actions.
pub trait Policy: Sync {
    fn chunk_size(&self) -> usize;
    fn predict_chunk(&self, proprio: &[f64], image: &Image) -> Vec<Action>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct NnPolicy {
    pub config: LearnerConfig,
    pub dim: usize,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Row-major `keys.len() / dim` normalized keys, sorted by (demo, frame).
    pub keys: Vec<f64>,
    pub refs: Vec<(u32, u32)>,
    pub demo_ids: Vec<String>,
    pub actions: Vec<Arc<Vec<Action>>>,
}

impl NnPolicy {
    pub fn len(&self) -> usize {
        self.refs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.refs.is_empty()
    }

    fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().zip(self.mean.iter().zip(&self.scale)).map(|(v, (m, s))| (v - m) / s).collect()
    }

    /// Index of the nearest key; the earliest wins ties.
    pub fn nearest(&self, raw: &[f64]) -> usize {
        let q = self.normalize(raw);
        let mut best = (f64::INFINITY, 0);
        for (k, key) in self.keys.chunks_exact(self.dim).enumerate() {
            let mut d = 0.0;
            for (a, b) in key.iter().zip(&q) {
                let t = a - b;
                d += t * t;
                if d >= best.0 {
                    break;
                }
            }
            if d < best.0 {
                best = (d, k);
            }
        }
        best.1
    }

    /// The `chunk_size` actions following a stored frame, padded by holding
    /// the last finger targets still.
    pub fn chunk_at(&self, key: usize) -> Vec<Action> {
        let (demo, frame) = self.refs[key];
        let acts = &self.actions[demo as usize];
        let mut out: Vec<Action> = acts.iter().skip(frame as usize).take(self.config.chunk_size).cloned().collect();
        let hold = Action::hold(&acts.last().map(|a| a.fingers.clone()).unwrap_or_default());
        out.resize(self.config.chunk_size, hold);
        out
    }
}

impl Policy for NnPolicy {
    fn chunk_size(&self) -> usize {
        self.config.chunk_size
    }

    fn predict_chunk(&self, proprio: &[f64], image: &Image) -> Vec<Action> {
        let f = features(&self.config, proprio, image);
        self.chunk_at(self.nearest(&f))
    }
}

/// Fits [`NnPolicy`]s, caching per-demo features between fits.
#[derive(Default)]
pub struct NnLearner {
    pub config: LearnerConfig,
    cache: Mutex<HashMap<String, Arc<Vec<f64>>>>,
}

impl NnLearner {
    pub fn new(config: LearnerConfig) -> NnLearner {
        NnLearner { config, cache: Mutex::new(HashMap::new()) }
    }

    fn demo_features(&self, demo: &Demonstration) -> Result<Arc<Vec<f64>>, LearnError> {
        if let Some(f) = self.cache.lock().expect("cache lock").get(&demo.id) {
            return Ok(f.clone());
        }
        let mut all = Vec::new();
        for i in 0..demo.len() {
            let img = demo.image(i)?;
            all.extend(features(&self.config, &demo.frames[i].observation.proprio, &img));
        }
        let f = Arc::new(all);
        self.cache.lock().expect("cache lock").insert(demo.id.clone(), f.clone());
        Ok(f)
    }

    /// Stores a key for every frame of every demo. Demos are ordered by id.
    pub fn fit(&self, dataset: &[Demonstration]) -> Result<NnPolicy, LearnError> {
        if dataset.is_empty() {
            return Err(LearnError::EmptyDataset);
        }
        let mut order: Vec<&Demonstration> = dataset.iter().collect();
        order.sort_by(|a, b| a.id.cmp(&b.id));
        order.dedup_by(|a, b| a.id == b.id);

        let feats: Vec<Arc<Vec<f64>>> = order.par_iter().map(|d| self.demo_features(d)).collect::<Result<_, _>>()?;
        let dim = order[0].frames[0].observation.proprio.len() + (self.config.descriptor_cells as usize).pow(2);
        for (d, f) in order.iter().zip(&feats) {
            if f.len() != d.len() * dim {
                return Err(LearnError::DimensionMismatch(dim, f.len() / d.len().max(1)));
            }
        }

        let count: usize = feats.iter().map(|f| f.len() / dim).sum();
        let mut mean = vec![0.0; dim];
        for f in &feats {
            for row in f.chunks_exact(dim) {
                mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
            }
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut var = vec![0.0; dim];
        for f in &feats {
            for row in f.chunks_exact(dim) {
                var.iter_mut().zip(row.iter().zip(&mean)).for_each(|(s, (v, m))| *s += (v - m).powi(2));
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();

        let mut keys = Vec::with_capacity(count * dim);
        let mut refs = Vec::with_capacity(count);
        for (di, f) in feats.iter().enumerate() {
            for (fi, row) in f.chunks_exact(dim).enumerate() {
                keys.extend(row.iter().zip(mean.iter().zip(&scale)).map(|(v, (m, s))| (v - m) / s));
                refs.push((di as u32, fi as u32));
            }
        }
        Ok(NnPolicy {
            config: self.config,
            dim,
            mean,
            scale,
            keys,
            refs,
            demo_ids: order.iter().map(|d| d.id.clone()).collect(),
            actions: order.iter().map(|d| Arc::new(d.actions())).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRollout {
    pub success: bool,
    pub actions: Vec<Action>,
    pub final_state: WorldState,
}

/// Runs a policy from `start`: each predicted chunk is executed open loop,
/// and the policy is queried again between chunks. Stops at success or
/// after `max_steps` steps.
pub fn rollout_policy(
    policy: &dyn Policy,
    world: &World,
    start: &WorldState,
    scene: &Scene,
    max_steps: usize,
) -> PolicyRollout {
    let mut state = start.clone();
    let mut actions = Vec::new();
    if world.eval_success(&state) {
        return PolicyRollout { success: true, actions, final_state: state };
    }
    while actions.len() < max_steps {
        let image = render_scene(&state, scene);
        let chunk = policy.predict_chunk(&state.proprio(), &image);
        for a in chunk {
            state = world.step(&state, &a);
            actions.push(a);
            if world.eval_success(&state) {
                return PolicyRollout { success: true, actions, final_state: state };
            }
            if actions.len() >= max_steps {
                break;
            }
        }
    }
    PolicyRollout { success: false, actions, final_state: state }
}

const MAGIC: &[u8; 8] = b"NNPOLv01";

#[derive(Serialize, Deserialize)]
struct PolicyMeta {
    config: LearnerConfig,
    dim: usize,
    keys: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    demo_ids: Vec<String>,
    actions_per_demo: Vec<usize>,
    fingers: usize,
}

/// Writes `<dir>/policy.json` (metadata) and `<dir>/policy.bin` (keys,
/// references and action tables, little-endian).
pub fn save_policy(policy: &NnPolicy, dir: &Path) -> Result<(), LearnError> {
    let io = |e: std::io::Error| LearnError::File(e.to_string());
    std::fs::create_dir_all(dir).map_err(io)?;
    let fingers = policy.actions.first().and_then(|a| a.first()).map_or(0, |a| a.fingers.len());
    let meta = PolicyMeta {
        config: policy.config,
        dim: policy.dim,
        keys: policy.len(),
        mean: policy.mean.clone(),
        scale: policy.scale.clone(),
        demo_ids: policy.demo_ids.clone(),
        actions_per_demo: policy.actions.iter().map(|a| a.len()).collect(),
        fingers,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| LearnError::File(e.to_string()))?;
    std::fs::write(dir.join("policy.json"), json).map_err(io)?;

    let mut buf = Vec::with_capacity(8 + policy.keys.len() * 8 + policy.refs.len() * 8);
    buf.extend_from_slice(MAGIC);
    policy.keys.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    for (d, f) in &policy.refs {
        buf.extend_from_slice(&d.to_le_bytes());
        buf.extend_from_slice(&f.to_le_bytes());
    }
    for acts in &policy.actions {
        for a in acts.iter() {
            a.ee_delta.iter().chain(&a.fingers).for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        }
    }
    let mut file = std::fs::File::create(dir.join("policy.bin")).map_err(io)?;
    file.write_all(&buf).map_err(io)
}

pub fn load_policy(dir: &Path) -> Result<NnPolicy, LearnError> {
    let io = |e: std::io::Error| LearnError::File(e.to_string());
    let meta: PolicyMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("policy.json")).map_err(io)?)
        .map_err(|e| LearnError::File(e.to_string()))?;
    let mut buf = Vec::new();
    std::fs::File::open(dir.join("policy.bin")).map_err(io)?.read_to_end(&mut buf).map_err(io)?;
    if buf.len() < 8 || &buf[..8] != MAGIC {
        return Err(LearnError::File("bad policy.bin header".into()));
    }
    let total_actions: usize = meta.actions_per_demo.iter().sum();
    let expected = 8 + meta.keys * meta.dim * 8 + meta.keys * 8 + total_actions * (6 + meta.fingers) * 8;
    if buf.len() != expected {
        return Err(LearnError::File(format!("policy.bin has {} bytes, expected {expected}", buf.len())));
    }
    let mut pos = 8;
    let f64_at = |pos: &mut usize| {
        let v = f64::from_le_bytes(buf[*pos..*pos + 8].try_into().expect("8 bytes"));
        *pos += 8;
        v
    };
    let keys: Vec<f64> = (0..meta.keys * meta.dim).map(|_| f64_at(&mut pos)).collect();
    let mut refs = Vec::with_capacity(meta.keys);
    for _ in 0..meta.keys {
        let d = u32::from_le_bytes(buf[pos..pos + 4].try_into().expect("4 bytes"));
        let f = u32::from_le_bytes(buf[pos + 4..pos + 8].try_into().expect("4 bytes"));
        refs.push((d, f));
        pos += 8;
    }
    let mut actions = Vec::with_capacity(meta.actions_per_demo.len());
    for &n in &meta.actions_per_demo {
        let mut acts = Vec::with_capacity(n);
        for _ in 0..n {
            let mut ee = [0.0; 6];
            ee.iter_mut().for_each(|v| *v = f64_at(&mut pos));
            let fingers = (0..meta.fingers).map(|_| f64_at(&mut pos)).collect();
            acts.push(Action::new(ee, fingers));
        }
        actions.push(Arc::new(acts));
    }
    Ok(NnPolicy {
        config: meta.config,
        dim: meta.dim,
        mean: meta.mean,
        scale: meta.scale,
        keys,
        refs,
        demo_ids: meta.demo_ids,
        actions,
    })
}

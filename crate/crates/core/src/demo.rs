//! Demonstrations: per-frame observations, actions and simulator snapshots,
//! plus the JSON file format they are stored in.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

use crate::render::{self, Image, Scene};
use crate::se3::Twist;
use crate::sim::snapshot::{self, SnapshotError};
use crate::sim::{SimConfig, TaskSpec, World, WorldState};

pub const FORMAT_VERSION: u32 = 1;
pub const CONTROL_HZ: f64 = 30.0;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("corrupt demo file: {0}")]
    CorruptFile(String),
    #[error("simulator state version {found} is not supported (expected {expected})")]
    StateVersionMismatch { found: u8, expected: u8 },
    #[error("bad simulator state: {0}")]
    BadState(String),
    #[error("demo task {demo} does not match world task {world}")]
    TaskMismatch { demo: String, world: String },
    #[error("invalid demonstration: {0}")]
    Invalid(String),
    #[error("provenance of {id} does not resolve: missing parent {parent}")]
    BrokenProvenance { id: String, parent: String },
}

impl From<SnapshotError> for DemoError {
    fn from(e: SnapshotError) -> Self {
        match e {
            SnapshotError::Version { found, expected } => DemoError::StateVersionMismatch { found, expected },
            other => DemoError::BadState(other.to_string()),
        }
    }
}

/// Per-step normalization: a normalized component of 1 moves this far.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionScale {
    /// Meters per step.
    pub linear: f64,
    /// Radians per step.
    pub angular: f64,
}

impl Default for ActionScale {
    fn default() -> Self {
        ActionScale { linear: 0.01, angular: 0.05 }
    }
}

impl ActionScale {
    /// Normalized `[wx, wy, wz, vx, vy, vz]` to a physical twist.
    pub fn to_twist(&self, ee: &[f64; 6]) -> Twist {
        let a = self.angular;
        let l = self.linear;
        Twist::new([ee[0] * a, ee[1] * a, ee[2] * a], [ee[3] * l, ee[4] * l, ee[5] * l])
    }

    pub fn from_twist(&self, t: &Twist) -> [f64; 6] {
        let (w, v) = (t.angular, t.linear);
        let a = self.angular;
        let l = self.linear;
        [w[0] / a, w[1] / a, w[2] / a, v[0] / l, v[1] / l, v[2] / l]
    }
}

/// One control command: a normalized body-frame EE delta and finger targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    /// `[wx, wy, wz, vx, vy, vz]`, each nominally in `[-1, 1]`.
    pub ee_delta: [f64; 6],
    pub fingers: Vec<f64>,
}

impl Action {
    pub fn new(ee_delta: [f64; 6], fingers: Vec<f64>) -> Action {
        Action { ee_delta, fingers }
    }

    /// No motion, fingers held at `fingers`.
    pub fn hold(fingers: &[f64]) -> Action {
        Action { ee_delta: [0.0; 6], fingers: fingers.to_vec() }
    }

    pub fn clamped_ee(&self) -> [f64; 6] {
        self.ee_delta.map(|v| v.clamp(-1.0, 1.0))
    }

    pub fn clamped(&self) -> Action {
        Action { ee_delta: self.clamped_ee(), fingers: self.fingers.clone() }
    }

    pub fn is_normalized(&self) -> bool {
        self.ee_delta.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    pub fn max_abs_ee(&self) -> f64 {
        self.ee_delta.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Camera,
    Light,
    Swap,
    Relocate,
    Interpolate,
    Retarget,
    Aggregate,
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Teleop,
    Scripted { seed: u64 },
    Augmented { operator: AugmentOp, parent: String, seed: u64 },
}

impl Provenance {
    pub fn parent(&self) -> Option<&str> {
        match self {
            Provenance::Augmented { parent, .. } => Some(parent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Rendered on demand from the snapshot and the demo's scene when absent.
    pub image: Option<Image>,
    pub proprio: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub time: f64,
    pub observation: Observation,
    pub action: Action,
    /// Encoded [`WorldState`] before `action` is applied.
    pub sim_state: Vec<u8>,
}

impl FrameRecord {
    pub fn state(&self) -> Result<WorldState, DemoError> {
        Ok(snapshot::decode(&self.sim_state)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub id: String,
    pub task: TaskSpec,
    pub provenance: Provenance,
    pub action_scale: ActionScale,
    /// Camera, light and materials used to render every frame.
    pub scene: Scene,
    pub frames: Vec<FrameRecord>,
    pub format_version: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub success: bool,
    pub final_state: WorldState,
}

impl Demonstration {
    /// Records a rollout of `actions` from `start`. Images are left unrendered.
    pub fn from_rollout(
        id: impl Into<String>,
        world: &World,
        start: &WorldState,
        actions: &[Action],
        scene: Scene,
        provenance: Provenance,
    ) -> Demonstration {
        let states = world.rollout_states(start, actions);
        let frames = actions
            .iter()
            .zip(&states)
            .enumerate()
            .map(|(i, (a, s))| FrameRecord {
                time: i as f64 / CONTROL_HZ,
                observation: Observation { image: None, proprio: s.proprio() },
                action: a.clone(),
                sim_state: snapshot::encode(s),
            })
            .collect();
        Demonstration {
            id: id.into(),
            task: world.task,
            provenance,
            action_scale: world.config.action_scale,
            scene,
            frames,
            format_version: FORMAT_VERSION,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn actions(&self) -> Vec<Action> {
        self.frames.iter().map(|f| f.action.clone()).collect()
    }

    pub fn finger_dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.action.fingers.len())
    }

    /// The world this demo was recorded in.
    pub fn world(&self) -> World {
        let config =
            SimConfig { action_scale: self.action_scale, fingers: self.finger_dim().max(1), ..SimConfig::default() };
        World::with_config(self.task, config)
    }

    pub fn start_state(&self) -> Result<WorldState, DemoError> {
        self.frames.first().ok_or_else(|| DemoError::Invalid("no frames".into()))?.state()
    }

    pub fn state(&self, i: usize) -> Result<WorldState, DemoError> {
        self.frames.get(i).ok_or_else(|| DemoError::Invalid(format!("no frame {i}")))?.state()
    }

    /// Frame `i`'s image, rendering it if it was not stored.
    pub fn image(&self, i: usize) -> Result<Image, DemoError> {
        let frame = self.frames.get(i).ok_or_else(|| DemoError::Invalid(format!("no frame {i}")))?;
        match &frame.observation.image {
            Some(img) => Ok(img.clone()),
            None => Ok(render::render_scene(&frame.state()?, &self.scene)),
        }
    }

    pub fn materialize_images(&mut self) -> Result<(), DemoError> {
        for i in 0..self.frames.len() {
            if self.frames[i].observation.image.is_none() {
                let img = self.image(i)?;
                self.frames[i].observation.image = Some(img);
            }
        }
        Ok(())
    }

    pub fn drop_images(&mut self) {
        for f in &mut self.frames {
            f.observation.image = None;
        }
    }

    /// Checks the structural invariants that do not need a rollout.
    pub fn validate(&self) -> Result<(), DemoError> {
        if self.frames.len() < 2 {
            return Err(DemoError::Invalid(format!("{} frames, need at least 2", self.frames.len())));
        }
        let f = self.finger_dim();
        for (i, w) in self.frames.windows(2).enumerate() {
            if w[1].time <= w[0].time {
                return Err(DemoError::Invalid(format!("frame {} time does not increase", i + 1)));
            }
        }
        for (i, fr) in self.frames.iter().enumerate() {
            if fr.action.fingers.len() != f {
                return Err(DemoError::Invalid(format!("frame {i} finger dimension changes")));
            }
            if !fr.action.is_normalized() {
                return Err(DemoError::Invalid(format!("frame {i} action outside [-1, 1]")));
            }
        }
        Ok(())
    }
}

/// Steps `world` from the demo's first snapshot through all of its actions.
pub fn replay(demo: &Demonstration, world: &World) -> Result<ReplayOutcome, DemoError> {
    if demo.task.kind != world.task.kind {
        return Err(DemoError::TaskMismatch { demo: demo.task.kind.to_string(), world: world.task.kind.to_string() });
    }
    let start = demo.start_state()?;
    let final_state = demo.frames.iter().fold(start, |s, f| world.step(&s, &f.action));
    Ok(ReplayOutcome { success: world.eval_success(&final_state), final_state })
}

/// Ids along the provenance chain from `id` back to its root, `id` first.
pub fn provenance_chain(id: &str, demos: &BTreeMap<String, Provenance>) -> Result<Vec<String>, DemoError> {
    let mut chain = vec![id.to_owned()];
    let mut current = id.to_owned();
    loop {
        let prov = demos
            .get(&current)
            .ok_or_else(|| DemoError::BrokenProvenance { id: id.to_owned(), parent: current.clone() })?;
        match prov.parent() {
            None => return Ok(chain),
            Some(p) => {
                if chain.iter().any(|c| c == p) {
                    return Err(DemoError::Invalid(format!("provenance cycle through {p}")));
                }
                chain.push(p.to_owned());
                current = p.to_owned();
            }
        }
    }
}

// On-disk layout.

#[derive(Serialize, Deserialize)]
struct FileImage {
    w: u32,
    h: u32,
    rgb8_b64: String,
}

#[derive(Serialize, Deserialize)]
struct FileObs {
    image: FileImage,
    proprio: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct FileFrame {
    t: f64,
    obs: FileObs,
    action: Action,
    sim_state_b64: String,
}

#[derive(Serialize, Deserialize)]
struct FileDemo {
    format_version: u32,
    id: String,
    task: TaskSpec,
    provenance: Provenance,
    action_scale: ActionScale,
    scene: Scene,
    frames: Vec<FileFrame>,
    checksum: String,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn checksum_of(file: &mut FileDemo) -> String {
    let saved = std::mem::take(&mut file.checksum);
    let bytes = serde_json::to_vec(&*file).expect("demo serializes");
    file.checksum = saved;
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes a demo to its JSON file form, rendering any missing images.
pub fn to_json(demo: &Demonstration) -> Result<String, DemoError> {
    let mut frames = Vec::with_capacity(demo.frames.len());
    for (i, f) in demo.frames.iter().enumerate() {
        let img = demo.image(i)?;
        frames.push(FileFrame {
            t: f.time,
            obs: FileObs {
                image: FileImage { w: img.width, h: img.height, rgb8_b64: B64.encode(&img.data) },
                proprio: f.observation.proprio.clone(),
            },
            action: f.action.clone(),
            sim_state_b64: B64.encode(&f.sim_state),
        });
    }
    let mut file = FileDemo {
        format_version: demo.format_version,
        id: demo.id.clone(),
        task: demo.task,
        provenance: demo.provenance.clone(),
        action_scale: demo.action_scale,
        scene: demo.scene.clone(),
        frames,
        checksum: String::new(),
    };
    file.checksum = checksum_of(&mut file);
    Ok(serde_json::to_string(&file).expect("demo serializes"))
}

pub fn from_json(text: &str, keep_images: bool) -> Result<Demonstration, DemoError> {
    let probe: VersionProbe =
        serde_json::from_str(text).map_err(|e| DemoError::CorruptFile(format!("unreadable header: {e}")))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(DemoError::FormatVersionMismatch { found: probe.format_version, expected: FORMAT_VERSION });
    }
    let mut file: FileDemo = serde_json::from_str(text).map_err(|e| DemoError::CorruptFile(e.to_string()))?;
    if checksum_of(&mut file) != file.checksum {
        return Err(DemoError::CorruptFile("checksum mismatch".into()));
    }
    let mut frames = Vec::with_capacity(file.frames.len());
    for f in file.frames {
        let sim_state = B64.decode(&f.sim_state_b64).map_err(|e| DemoError::CorruptFile(e.to_string()))?;
        let image = if keep_images {
            let data = B64.decode(&f.obs.image.rgb8_b64).map_err(|e| DemoError::CorruptFile(e.to_string()))?;
            if data.len() != (f.obs.image.w * f.obs.image.h * 3) as usize {
                return Err(DemoError::CorruptFile("image size does not match dimensions".into()));
            }
            Some(Image { width: f.obs.image.w, height: f.obs.image.h, data })
        } else {
            None
        };
        frames.push(FrameRecord {
            time: f.t,
            observation: Observation { image, proprio: f.obs.proprio },
            action: f.action,
            sim_state,
        });
    }
    Ok(Demonstration {
        id: file.id,
        task: file.task,
        provenance: file.provenance,
        action_scale: file.action_scale,
        scene: file.scene,
        frames,
        format_version: file.format_version,
    })
}

pub fn save(demo: &Demonstration, path: &Path) -> Result<(), DemoError> {
    let text = to_json(demo)?;
    std::fs::write(path, text).map_err(|source| DemoError::Io { path: path.display().to_string(), source })
}

/// Loads a demo with its stored images.
pub fn load(path: &Path) -> Result<Demonstration, DemoError> {
    load_with(path, true)
}

/// Loads a demo and discards stored images; they are re-rendered on demand.
pub fn load_lazy(path: &Path) -> Result<Demonstration, DemoError> {
    load_with(path, false)
}

fn load_with(path: &Path, keep_images: bool) -> Result<Demonstration, DemoError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| DemoError::Io { path: path.display().to_string(), source })?;
    from_json(&text, keep_images)
}

/// Loads every `*.json` demo in a directory, sorted by id.
pub fn load_dir(dir: &Path) -> Result<Vec<Demonstration>, DemoError> {
    let entries = std::fs::read_dir(dir).map_err(|source| DemoError::Io { path: dir.display().to_string(), source })?;
    let mut demos = Vec::new();
    for entry in entries {
        let path = entry.map_err(|source| DemoError::Io { path: dir.display().to_string(), source })?.path();
        if path.extension().is_some_and(|e| e == "json") && path.file_name().is_some_and(|n| n != "manifest.json") {
            demos.push(load_lazy(&path)?);
        }
    }
    demos.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(demos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{TaskKind, TaskSpec};

    fn two_frame_demo() -> Demonstration {
        let w = World::new(TaskSpec::new(TaskKind::PickPlace, 1));
        let s = w.reset(1);
        let actions = vec![Action::new([0.0, 0.0, 0.1, 0.5, -0.25, 0.0], vec![1.0, 0.0]), Action::hold(&[1.0, 0.0])];
        Demonstration::from_rollout("d0", &w, &s, &actions, Scene::default(), Provenance::Scripted { seed: 1 })
    }

    #[test]
    fn action_scale_round_trip() {
        let s = ActionScale::default();
        let a = [0.1, -0.2, 0.3, -0.4, 0.5, -1.0];
        let back = s.from_twist(&s.to_twist(&a));
        for k in 0..6 {
            assert!((back[k] - a[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn json_round_trip_is_identical() {
        let mut d = two_frame_demo();
        d.materialize_images().unwrap();
        let back = from_json(&to_json(&d).unwrap(), true).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn bad_version_and_truncation() {
        let text = to_json(&two_frame_demo()).unwrap();
        let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
        assert!(matches!(from_json(&bumped, true), Err(DemoError::FormatVersionMismatch { found: 2, .. })));
        assert!(matches!(from_json(&text[..text.len() / 2], true), Err(DemoError::CorruptFile(_))));
        let tampered = text.replacen("\"d0\"", "\"d1\"", 1);
        assert!(matches!(from_json(&tampered, true), Err(DemoError::CorruptFile(_))));
    }

    #[test]
    fn replay_rejects_other_task_and_state_version() {
        let d = two_frame_demo();
        let other = World::new(TaskSpec::new(TaskKind::Pour, 1));
        assert!(matches!(replay(&d, &other), Err(DemoError::TaskMismatch { .. })));
        let mut bad = d.clone();
        bad.frames[0].sim_state[3] = 7;
        assert!(matches!(replay(&bad, &d.world()), Err(DemoError::StateVersionMismatch { found: 7, .. })));
    }

    #[test]
    fn provenance_chain_reaches_root() {
        let mut m = BTreeMap::new();
        m.insert("root".to_string(), Provenance::Teleop);
        m.insert(
            "a".to_string(),
            Provenance::Augmented { operator: AugmentOp::Camera, parent: "root".into(), seed: 1 },
        );
        m.insert("b".to_string(), Provenance::Augmented { operator: AugmentOp::Retarget, parent: "a".into(), seed: 2 });
        assert_eq!(provenance_chain("b", &m).unwrap(), vec!["b", "a", "root"]);
        m.insert("c".to_string(), Provenance::Augmented { operator: AugmentOp::Light, parent: "gone".into(), seed: 3 });
        assert!(matches!(provenance_chain("c", &m), Err(DemoError::BrokenProvenance { .. })));
    }
}

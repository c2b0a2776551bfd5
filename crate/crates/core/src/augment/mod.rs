//! Demonstration augmentation operators.
//!
//! Visual operators re-render stored states under a new scene. Trajectory
//! operators change object poses and rewrite actions, then roll the result
//! out and keep it only if the task still succeeds.

mod aggregate;
mod batch;
mod relocate;
mod retarget;
mod sensitivity;
mod swap;
mod visual;

pub use aggregate::aggregate_small_motions;
pub use batch::{generate_batch, generate_level_batch, sample_start, start_deltas, GenerationStats, SeedDemo};
pub use relocate::{interpolation_baseline, naive_relocate, Relocation};
pub use retarget::{object_delta, per_step_deltas, retarget, retarget_to, symmetry_reduced};
pub use sensitivity::{
    estimate_sensitivity, estimate_sensitivity_with, segment_lengths, Evaluator, Probe, RolloutEvaluator,
    SensitivityProfile,
};
pub use swap::swap_object_resample;
pub use visual::{randomize_camera, randomize_light_texture, randomized_scene, sample_light_direction};

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

use crate::demo::{AugmentOp, DemoError, Demonstration, Provenance};
use crate::render::Scene;
use crate::seed::derive_seed;
use crate::sim::{Geometry, World, WorldState};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("replay failed: {0}")]
    ReplayFailed(String),
    #[error("no success after {attempts} attempts")]
    ExhaustedAttempts { attempts: usize },
    #[error("pose is outside the reachable workspace")]
    UnreachablePose,
    #[error("demonstration never closes the hand")]
    NoGraspEvent,
    #[error("retargeted rollout failed: {0}")]
    RetargetReplayFailed(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Demo(#[from] DemoError),
}

/// Knobs for every augmentation operator. Scales run from 0 (off) to 10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Half-width of each Euler angle perturbation of the camera, degrees.
    pub camera_euler_deg: f64,
    /// Half-width of each camera translation perturbation, meters.
    pub camera_translation: f64,
    pub light_scale: f64,
    pub texture_scale: f64,
    /// Per-dimension Gaussian noise used when resampling for a new object.
    pub object_noise_sigma: f64,
    pub max_attempts: usize,
    /// Number of sensitivity segments M.
    pub segments: usize,
    pub delta_cap: f64,
    pub delta_step: f64,
    pub trials_per_delta: usize,
    /// Aggregation threshold on EE delta components (m and rad per step).
    pub ee_epsilon: f64,
    /// Aggregation threshold on finger target changes.
    pub finger_epsilon: f64,
    /// Width of the sampled pose ranges relative to the level's ranges.
    pub pose_scale: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            camera_euler_deg: 15.0,
            camera_translation: 0.05,
            light_scale: 2.0,
            texture_scale: 2.0,
            object_noise_sigma: 0.05,
            max_attempts: 200,
            segments: 10,
            delta_cap: 1.0,
            delta_step: 0.05,
            trials_per_delta: 3,
            ee_epsilon: 0.0,
            finger_epsilon: 0.0,
            pose_scale: 10.0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), AugmentError> {
        for (name, v) in
            [("light_scale", self.light_scale), ("texture_scale", self.texture_scale), ("pose_scale", self.pose_scale)]
        {
            if !(0.0..=10.0).contains(&v) {
                return Err(AugmentError::Invalid(format!("{name} {v} outside [0, 10]")));
            }
        }
        if self.delta_step <= 0.0 || self.delta_cap < 0.0 || self.trials_per_delta == 0 || self.segments == 0 {
            return Err(AugmentError::Invalid(
                "sensitivity grid needs delta_step > 0, trials ≥ 1, segments ≥ 1".into(),
            ));
        }
        if self.ee_epsilon < 0.0 || self.finger_epsilon < 0.0 || self.object_noise_sigma < 0.0 {
            return Err(AugmentError::Invalid("thresholds and noise must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AugmentConfig, AugmentError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| AugmentError::Invalid(format!("{}: {e}", path.display())))?;
        let cfg: AugmentConfig = serde_json::from_str(&text).map_err(|e| AugmentError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Id for a demo derived from `parent` by `op` with `seed`.
pub(crate) fn child_id(parent: &str, op: AugmentOp, seed: u64) -> String {
    format!("{op}-{:016x}", derive_seed(seed, parent))
}

pub(crate) fn child_provenance(parent: &Demonstration, op: AugmentOp, seed: u64) -> Provenance {
    Provenance::Augmented { operator: op, parent: parent.id.clone(), seed }
}

/// Records `actions` from `start` and keeps the result only if it succeeds.
pub(crate) fn verified_demo(
    parent: &Demonstration,
    world: &World,
    start: &WorldState,
    actions: &[crate::demo::Action],
    scene: Scene,
    op: AugmentOp,
    seed: u64,
) -> Result<Demonstration, String> {
    if actions.len() < 2 {
        return Err("fewer than two actions".into());
    }
    let d = Demonstration::from_rollout(
        child_id(&parent.id, op, seed),
        world,
        start,
        actions,
        scene,
        child_provenance(parent, op, seed),
    );
    let outcome = crate::demo::replay(&d, world).map_err(|e| e.to_string())?;
    if outcome.success {
        Ok(d)
    } else {
        Err("task not accomplished".into())
    }
}

/// Replaces the manipulated object's geometry in a state.
pub(crate) fn with_geometry(state: &WorldState, geometry: Geometry) -> WorldState {
    let mut s = state.clone();
    let old = s.objects[0].geometry;
    s.objects[0].geometry = geometry;
    s.objects[0].pose.translation[2] += geometry.rest_height() - old.rest_height();
    s
}

//! Deterministic kinematic "floating hand" simulator.
//!
//! The end effector is a free 6-DoF frame driven by body-frame pose deltas.
//! Grasping is kinematic: a closed hand near a graspable object carries it
//! rigidly (or, for the valve, turns it about its fixed axis). There is no
//! contact dynamics and no randomness in `step`.

mod expert;
pub mod snapshot;
pub mod task;

pub use expert::{scripted_expert, ExpertConfig};
pub use task::{Geometry, Interval, LevelRanges, LevelTable, Placement, TaskKind, TaskSpec};

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

use crate::demo::{Action, ActionScale};
use crate::se3::{self, exp_map, Pose, Quat, Vec3};
use crate::seed;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scripted expert failed after {attempts} attempts: {reason}")]
    ExpertFailed { attempts: usize, reason: String },
    #[error("bad configuration: {0}")]
    Config(String),
}

/// Physical constants of the kinematic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub action_scale: ActionScale,
    /// Finger dimension F; finger 0 is the aperture (1 open, 0 closed).
    pub fingers: usize,
    pub grasp_radius: f64,
    pub grasp_threshold: f64,
    pub release_threshold: f64,
    pub pour_tilt_deg: f64,
    /// Horizontal distance from the bowl center within which the mouth pours.
    pub pour_radius: f64,
    pub particles: u32,
    pub plate_radius: f64,
    pub plate_top: f64,
    pub bowl_radius: f64,
    pub bowl_rim: f64,
    pub valve_site_radius: f64,
    pub valve_handle_height: f64,
    pub ee_home: [f64; 3],
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            action_scale: ActionScale::default(),
            fingers: 2,
            grasp_radius: 0.04,
            grasp_threshold: 0.3,
            release_threshold: 0.6,
            pour_tilt_deg: 60.0,
            pour_radius: 0.06,
            particles: 4,
            plate_radius: 0.07,
            plate_top: 0.01,
            bowl_radius: 0.07,
            bowl_rim: 0.05,
            valve_site_radius: 0.05,
            valve_handle_height: 0.05,
            ee_home: [0.0, 0.0, 0.2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u32,
    pub geometry: Geometry,
    pub pose: Pose,
    pub attached: bool,
}

/// How the hand currently holds an object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Grasp {
    /// Object index and its pose in the end-effector frame.
    Rigid { object: usize, offset: Pose },
    /// Valve object index and the blade being held.
    Valve { object: usize, blade: u32 },
}

impl Grasp {
    pub fn object(&self) -> usize {
        match *self {
            Grasp::Rigid { object, .. } | Grasp::Valve { object, .. } => object,
        }
    }
}

/// Complete simulator state. Object 0 is the manipulated object; object 1,
/// when present, is the target (plate or bowl).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub tick: u64,
    pub ee_pose: Pose,
    pub finger_values: Vec<f64>,
    pub objects: Vec<SceneObject>,
    pub grasp: Option<Grasp>,
    /// Cumulative valve rotation, radians.
    pub valve_angle: f64,
    pub particles_in_bowl: u32,
    pub particles_spilled: u32,
    /// Seed the state was reset from.
    pub rng_state: u64,
}

impl WorldState {
    pub fn manipulated(&self) -> &SceneObject {
        &self.objects[0]
    }

    pub fn target(&self) -> Option<&SceneObject> {
        self.objects.get(1)
    }

    pub fn aperture(&self) -> f64 {
        self.finger_values.first().copied().unwrap_or(1.0)
    }

    pub fn attached_count(&self) -> usize {
        self.objects.iter().filter(|o| o.attached).count()
    }

    /// Proprioception vector: EE pose (7) followed by finger values.
    pub fn proprio(&self) -> Vec<f64> {
        let mut v = self.ee_pose.to_array().to_vec();
        v.extend_from_slice(&self.finger_values);
        v
    }

    /// The placement this state was built from (object/target positions).
    pub fn placement(&self) -> Placement {
        let obj = &self.objects[0].pose;
        Placement {
            object: [obj.translation[0], obj.translation[1]],
            object_yaw_deg: obj.yaw().to_degrees(),
            target: self.target().map(|t| [t.pose.translation[0], t.pose.translation[1]]),
        }
    }
}

/// A task plus its physical configuration; owns no mutable state.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub task: TaskSpec,
    pub config: SimConfig,
}

impl World {
    pub fn new(task: TaskSpec) -> World {
        World { task, config: SimConfig::default() }
    }

    pub fn with_config(task: TaskSpec, config: SimConfig) -> World {
        World { task, config }
    }

    pub fn kind(&self) -> TaskKind {
        self.task.kind
    }

    pub fn home_pose(&self) -> Pose {
        Pose::from_translation(self.config.ee_home)
    }

    /// Samples object and target poses uniformly from the task's level ranges.
    pub fn reset(&self, seed: u64) -> WorldState {
        let mut rng = seed::rng_for(seed, "reset");
        let placement = self.task.ranges.sample(self.task.kind, None, &mut rng);
        let mut state = self.state_from_placement(&placement);
        state.rng_state = seed;
        state
    }

    pub fn state_from_placement(&self, p: &Placement) -> WorldState {
        let geom = self.task.object;
        let yaw = p.object_yaw_deg.to_radians();
        let mut objects = vec![SceneObject {
            id: 0,
            geometry: geom,
            pose: Pose::from_yaw(yaw, [p.object[0], p.object[1], geom.rest_height()]),
            attached: false,
        }];
        if let (Some(g), Some(t)) = (self.task.kind.target_geometry(), p.target) {
            objects.push(SceneObject {
                id: 1,
                geometry: g,
                pose: Pose::from_translation([t[0], t[1], 0.0]),
                attached: false,
            });
        }
        let mut fingers = vec![0.0; self.config.fingers.max(1)];
        fingers[0] = 1.0;
        WorldState {
            tick: 0,
            ee_pose: self.home_pose(),
            finger_values: fingers,
            objects,
            grasp: None,
            valve_angle: 0.0,
            particles_in_bowl: 0,
            particles_spilled: 0,
            rng_state: 0,
        }
    }

    /// World positions of the valve's graspable blade sites.
    pub fn valve_sites(&self, valve: &SceneObject) -> Vec<Vec3> {
        let blades = match valve.geometry {
            Geometry::Valve { blades } => blades.max(1),
            _ => return Vec::new(),
        };
        let r = self.config.valve_site_radius;
        let h = self.config.valve_handle_height;
        (0..blades)
            .map(|k| {
                let a = TAU * f64::from(k) / f64::from(blades);
                valve.pose.transform_point([r * a.cos(), r * a.sin(), h])
            })
            .collect()
    }

    /// Advances the world by one control step.
    pub fn step(&self, s: &WorldState, action: &Action) -> WorldState {
        let cfg = &self.config;
        let mut n = s.clone();
        n.tick = s.tick + 1;

        let twist = cfg.action_scale.to_twist(&action.clamped_ee());
        let old_ee = s.ee_pose;
        let new_ee = old_ee.compose(&exp_map(&twist));
        n.ee_pose = new_ee;
        for (i, v) in n.finger_values.iter_mut().enumerate() {
            if let Some(a) = action.fingers.get(i) {
                *v = a.clamp(0.0, 1.5);
            }
        }

        // Carry or turn what is held.
        match s.grasp {
            Some(Grasp::Rigid { object, offset }) => {
                n.objects[object].pose = new_ee.compose(&offset);
            }
            Some(Grasp::Valve { object, blade }) => {
                let turn = Pose::from_rotation(new_ee.rotation.mul(&old_ee.rotation.conjugate())).yaw();
                n.valve_angle += turn;
                let valve = &mut n.objects[object];
                valve.pose = Pose::from_yaw(turn, [0.0; 3]).compose(&Pose::from_rotation(valve.pose.rotation));
                valve.pose.translation = s.objects[object].pose.translation;
                let site = self.valve_sites(&n.objects[object])[blade as usize];
                if se3::norm(se3::sub(site, new_ee.translation)) > cfg.grasp_radius {
                    n.objects[object].attached = false;
                    n.grasp = None;
                }
            }
            None => {}
        }

        let aperture = n.aperture();
        if let Some(g) = n.grasp {
            if aperture > cfg.release_threshold {
                let idx = g.object();
                n.objects[idx].attached = false;
                n.grasp = None;
                if let Grasp::Rigid { .. } = g {
                    self.settle(&mut n, idx);
                }
            }
        } else if aperture < cfg.grasp_threshold {
            self.try_grasp(&mut n);
        }

        if self.task.kind == TaskKind::Pour {
            self.pour(&mut n);
        }
        n
    }

    fn try_grasp(&self, n: &mut WorldState) {
        let ee = n.ee_pose;
        let mut best: Option<(f64, Grasp)> = None;
        for (idx, obj) in n.objects.iter().enumerate() {
            if !obj.geometry.is_graspable() {
                continue;
            }
            let candidates: Vec<(Vec3, Grasp)> = match obj.geometry {
                Geometry::Valve { .. } => self
                    .valve_sites(obj)
                    .into_iter()
                    .enumerate()
                    .map(|(k, p)| (p, Grasp::Valve { object: idx, blade: k as u32 }))
                    .collect(),
                _ => {
                    vec![(obj.pose.translation, Grasp::Rigid { object: idx, offset: ee.inverse().compose(&obj.pose) })]
                }
            };
            for (p, g) in candidates {
                let d = se3::norm(se3::sub(p, ee.translation));
                if d <= self.config.grasp_radius && best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                    best = Some((d, g));
                }
            }
        }
        if let Some((_, g)) = best {
            n.objects[g.object()].attached = true;
            n.grasp = Some(g);
        }
    }

    /// Drops a released object straight down onto the plate or the table,
    /// keeping only its yaw.
    fn settle(&self, n: &mut WorldState, idx: usize) {
        let pose = n.objects[idx].pose;
        let t = pose.translation;
        let on_plate = n.objects.iter().any(|o| {
            o.geometry == Geometry::Plate && horizontal_distance(o.pose.translation, t) <= self.config.plate_radius
        });
        let support = if on_plate { self.config.plate_top } else { 0.0 };
        let z = support + n.objects[idx].geometry.rest_height();
        n.objects[idx].pose = Pose::from_yaw(pose.yaw(), [t[0], t[1], z]);
    }

    fn pour(&self, n: &mut WorldState) {
        let remaining = self.config.particles.saturating_sub(n.particles_in_bowl + n.particles_spilled);
        if remaining == 0 {
            return;
        }
        let Some(Grasp::Rigid { object: 0, .. }) = n.grasp else { return };
        let bottle = &n.objects[0];
        let axis = bottle.pose.rotation.rotate([0.0, 0.0, 1.0]);
        let tilt = axis[2].clamp(-1.0, 1.0).acos();
        if tilt <= self.config.pour_tilt_deg.to_radians() {
            return;
        }
        let mouth = bottle.pose.transform_point([0.0, 0.0, bottle.geometry.half_height()]);
        let over_bowl = n.target().is_some_and(|bowl| {
            horizontal_distance(bowl.pose.translation, mouth) <= self.config.pour_radius
                && mouth[2] > self.config.bowl_rim
        });
        if over_bowl {
            n.particles_in_bowl += 1;
        } else {
            n.particles_spilled += 1;
        }
    }

    /// Binary task-success oracle on a final state.
    pub fn eval_success(&self, s: &WorldState) -> bool {
        match self.task.kind {
            TaskKind::PickPlace => {
                let obj = s.manipulated();
                let Some(plate) = s.target() else { return false };
                let rest = self.config.plate_top + obj.geometry.rest_height();
                !obj.attached
                    && horizontal_distance(plate.pose.translation, obj.pose.translation) <= self.config.plate_radius
                    && (obj.pose.translation[2] - rest).abs() < 1e-9
            }
            TaskKind::Rotate => s.valve_angle >= 2.0 * TAU,
            TaskKind::Pour => s.particles_in_bowl == self.config.particles,
        }
    }

    pub fn rollout(&self, start: &WorldState, actions: &[Action]) -> WorldState {
        actions.iter().fold(start.clone(), |s, a| self.step(&s, a))
    }

    /// All states visited, including the start (`actions.len() + 1` entries).
    pub fn rollout_states(&self, start: &WorldState, actions: &[Action]) -> Vec<WorldState> {
        let mut out = Vec::with_capacity(actions.len() + 1);
        out.push(start.clone());
        for a in actions {
            let next = self.step(out.last().expect("nonempty"), a);
            out.push(next);
        }
        out
    }

    /// True when `p` keeps the end effector inside the reachable workspace.
    pub fn in_workspace(&self, p: &Pose) -> bool {
        let t = p.translation;
        t[0].abs() <= 0.5 && t[1].abs() <= 0.6 && t[2] >= 0.0 && t[2] <= 0.6
    }
}

pub(crate) fn horizontal_distance(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Rotation that tilts the hand about its own x axis.
pub(crate) fn tilt_x(angle: f64) -> Quat {
    Quat::from_axis_angle([1.0, 0.0, 0.0], angle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(kind: TaskKind) -> World {
        World::new(TaskSpec::new(kind, 1))
    }

    fn act(ee: [f64; 6], aperture: f64) -> Action {
        Action { ee_delta: ee, fingers: vec![aperture, 0.0] }
    }

    #[test]
    fn zero_action_only_advances_time() {
        let w = world(TaskKind::PickPlace);
        let s = w.reset(5);
        let n = w.step(&s, &act([0.0; 6], 1.0));
        assert_eq!(n.tick, s.tick + 1);
        let mut same = n.clone();
        same.tick = s.tick;
        assert_eq!(same, s);
    }

    #[test]
    fn attached_object_moves_with_hand() {
        let w = world(TaskKind::PickPlace);
        let mut s = w.reset(1);
        s.ee_pose = Pose::from_translation(s.objects[0].pose.translation);
        let s = w.step(&s, &act([0.0; 6], 0.0));
        assert!(s.objects[0].attached);
        let before = s.objects[0].pose.translation;
        let s2 = w.step(&s, &act([0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 0.0));
        let after = s2.objects[0].pose.translation;
        assert!((after[0] - before[0] - 0.01).abs() < 1e-15);
        assert_eq!(after[1], before[1]);
        assert_eq!(after[2], before[2]);
    }

    #[test]
    fn release_settles_onto_plate() {
        let w = world(TaskKind::PickPlace);
        let mut s = w.reset(2);
        s.ee_pose = Pose::from_translation(s.objects[0].pose.translation);
        let mut s = w.step(&s, &act([0.0; 6], 0.0));
        let plate = s.objects[1].pose.translation;
        s.ee_pose = Pose::from_translation([plate[0], plate[1], 0.06]);
        let s = w.step(&s, &act([0.0; 6], 0.0));
        assert!(!w.eval_success(&s), "held object is not placed");
        let s = w.step(&s, &act([0.0; 6], 1.0));
        assert!(!s.objects[0].attached);
        assert!(w.eval_success(&s));
    }

    #[test]
    fn rotate_threshold_is_strict() {
        let w = world(TaskKind::Rotate);
        let mut s = w.reset(0);
        s.valve_angle = 719f64.to_radians();
        assert!(!w.eval_success(&s));
        s.valve_angle = 720f64.to_radians();
        assert!(w.eval_success(&s));
    }

    #[test]
    fn pour_success_needs_all_particles() {
        let w = world(TaskKind::Pour);
        let mut s = w.reset(0);
        s.particles_in_bowl = 3;
        assert!(!w.eval_success(&s));
        s.particles_in_bowl = 4;
        assert!(w.eval_success(&s));
    }

    #[test]
    fn reset_is_deterministic() {
        for kind in TaskKind::ALL {
            let w = world(kind);
            assert_eq!(w.reset(17), w.reset(17));
            assert_ne!(w.reset(17).objects[0].pose, w.reset(18).objects[0].pose);
        }
    }

    #[test]
    fn valve_follows_orbiting_hand() {
        let w = world(TaskKind::Rotate);
        let s = w.reset(4);
        let site = w.valve_sites(&s.objects[0])[0];
        let center = s.objects[0].pose.translation;
        let radial = (site[1] - center[1]).atan2(site[0] - center[0]);
        let mut s = s.clone();
        s.ee_pose = Pose::from_yaw(radial, site);
        s = w.step(&s, &act([0.0; 6], 0.0));
        assert!(s.objects[0].attached);
        let r = w.config.valve_site_radius;
        let orbit = act([0.0, 0.0, 1.0, 0.0, r / 0.01 * 0.05, 0.0], 0.0);
        let mut last = s.valve_angle;
        for _ in 0..100 {
            s = w.step(&s, &orbit);
            assert!(s.valve_angle >= last);
            last = s.valve_angle;
        }
        assert!(s.objects[0].attached);
        assert!((s.valve_angle - 5.0).abs() < 1e-9);
    }
}

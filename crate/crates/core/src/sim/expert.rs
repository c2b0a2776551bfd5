//! Closed-loop scripted experts that stand in for a human teleoperator.
//!
//! Each expert is a short list of waypoints. Between waypoints the hand
//! follows the screw motion `exp(t · log(ee⁻¹ · goal))`, stepping at a fixed
//! normalized speed, so every approach action is a constant body twist.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};

use super::{tilt_x, SimError, TaskKind, World, WorldState};
use crate::demo::{Action, Demonstration, Provenance};
use crate::render::Scene;
use crate::se3::{self, log_map, split_delta, Pose};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertConfig {
    pub max_attempts: usize,
    /// Largest normalized action component during free motion.
    pub speed: f64,
    pub max_steps: usize,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig { max_attempts: 5, speed: 0.42, max_steps: 2000 }
    }
}

const CLOSE: [f64; 4] = [0.75, 0.5, 0.25, 0.0];
const OPEN: [f64; 3] = [0.4, 0.8, 1.0];
/// Normalized angular speed while tilting the bottle (0.02 rad per step).
const TILT_SPEED: f64 = 0.4;
const POUR_TILT_DEG: f64 = 80.0;
/// Tilt at which the mouth is aimed at the bowl center.
const POUR_AIM_DEG: f64 = 64.0;

struct Planner<'a> {
    world: &'a World,
    state: WorldState,
    actions: Vec<Action>,
    fingers: Vec<f64>,
    speed: f64,
    max_steps: usize,
}

impl<'a> Planner<'a> {
    fn new(world: &'a World, start: &WorldState, speed: f64, max_steps: usize) -> Self {
        Planner {
            world,
            state: start.clone(),
            actions: Vec::new(),
            fingers: start.finger_values.clone(),
            speed,
            max_steps,
        }
    }

    fn push(&mut self, ee: [f64; 6]) -> Result<(), String> {
        if self.actions.len() >= self.max_steps {
            return Err(format!("exceeded {} steps", self.max_steps));
        }
        let a = Action::new(ee, self.fingers.clone());
        self.state = self.world.step(&self.state, &a);
        self.actions.push(a);
        Ok(())
    }

    fn set_aperture(&mut self, seq: &[f64]) -> Result<(), String> {
        for &v in seq {
            self.fingers[0] = v;
            if let Some(curl) = self.fingers.get_mut(1) {
                *curl = 1.0 - v;
            }
            self.push([0.0; 6])?;
        }
        Ok(())
    }

    fn move_to(&mut self, goal: Pose) -> Result<(), String> {
        self.move_to_at(goal, self.speed)
    }

    fn move_to_at(&mut self, goal: Pose, speed: f64) -> Result<(), String> {
        let scale = self.world.config.action_scale;
        loop {
            let delta = self.state.ee_pose.inverse().compose(&goal);
            let (piece, count) = split_delta(&delta);
            let xi = log_map(&piece).map_err(|e| e.to_string())?;
            let n = scale.from_twist(&xi);
            let m = n.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if m < 1e-9 {
                return Ok(());
            }
            let k = if m <= speed { 1.0 } else { speed / m };
            self.push(n.map(|v| v * k))?;
            if k == 1.0 && count == 1 {
                return Ok(());
            }
        }
    }
}

fn pick_place(p: &mut Planner, hover: f64) -> Result<(), String> {
    let obj = p.state.objects[0].clone();
    let plate = p.state.target().ok_or("pick_place needs a plate")?.pose.translation;
    let cfg = &p.world.config;
    let yaw = obj.pose.yaw() - FRAC_PI_2;
    let [ox, oy, oz] = obj.pose.translation;
    p.move_to(Pose::from_yaw(yaw, [ox, oy, hover]))?;
    p.move_to(Pose::from_yaw(yaw, [ox, oy, oz]))?;
    p.set_aperture(&CLOSE)?;
    p.move_to(Pose::from_yaw(yaw, [ox, oy, hover]))?;
    p.move_to(Pose::from_yaw(yaw, [plate[0], plate[1], hover]))?;
    let drop_z = cfg.plate_top + obj.geometry.rest_height() + 0.02;
    p.move_to(Pose::from_yaw(yaw, [plate[0], plate[1], drop_z]))?;
    p.set_aperture(&OPEN)?;
    p.move_to(Pose::from_yaw(yaw, [plate[0], plate[1], hover]))
}

fn pour(p: &mut Planner, hover: f64) -> Result<(), String> {
    let bottle = p.state.objects[0].clone();
    let bowl = p.state.target().ok_or("pour needs a bowl")?.pose.translation;
    let [bx, by, bz] = bottle.pose.translation;
    let carry = hover.max(0.18);
    p.move_to(Pose::from_translation([bx, by, carry]))?;
    p.move_to(Pose::from_translation([bx, by, bz]))?;
    p.set_aperture(&CLOSE)?;
    p.move_to(Pose::from_translation([bx, by, carry]))?;
    // Tilting about the hand's x axis swings the mouth towards -y.
    let reach = bottle.geometry.half_height() * POUR_AIM_DEG.to_radians().sin();
    let above = Pose::from_translation([bowl[0], bowl[1] + reach, carry]);
    p.move_to(above)?;
    let tilted = Pose::new(tilt_x(POUR_TILT_DEG.to_radians()), above.translation);
    p.move_to_at(tilted, TILT_SPEED)?;
    p.set_aperture(&[0.0, 0.0])
}

fn rotate(p: &mut Planner, hover: f64) -> Result<(), String> {
    let valve = p.state.objects[0].clone();
    let center = valve.pose.translation;
    let sites = p.world.valve_sites(&valve);
    let angle_of = |s: &se3::Vec3| (s[1] - center[1]).atan2(s[0] - center[0]);
    let gap = |a: f64| (a + FRAC_PI_2).rem_euclid(TAU).min(TAU - (a + FRAC_PI_2).rem_euclid(TAU));
    let site =
        *sites.iter().min_by(|a, b| gap(angle_of(a)).total_cmp(&gap(angle_of(b)))).ok_or("valve has no blades")?;
    let heading = angle_of(&site);
    p.move_to(Pose::from_yaw(heading, [site[0], site[1], site[2] + hover - 0.06]))?;
    p.move_to(Pose::from_yaw(heading, site))?;
    p.set_aperture(&CLOSE)?;

    // Orbit the valve axis: body yaw rate w with tangential speed w·r.
    let cfg = &p.world.config;
    let w = cfg.action_scale.angular;
    let v = w * cfg.valve_site_radius / cfg.action_scale.linear;
    let turns = ((2.0 * TAU + 0.15) / w).ceil() as usize;
    for _ in 0..turns {
        p.push([0.0, 0.0, 1.0, 0.0, v, 0.0])?;
    }
    p.set_aperture(&OPEN)?;
    let ee = p.state.ee_pose;
    p.move_to(Pose::new(ee.rotation, [ee.translation[0], ee.translation[1], ee.translation[2] + 0.05]))
}

/// Runs the task's scripted expert from `start`, retrying with jittered
/// speed and clearance until the rollout succeeds.
pub fn scripted_expert(
    world: &World,
    start: &WorldState,
    seed: u64,
    cfg: &ExpertConfig,
) -> Result<Demonstration, SimError> {
    let mut last = String::from("no attempts");
    for attempt in 0..cfg.max_attempts.max(1) {
        let mut rng = seed::rng_for(seed::derive_indexed(seed, "expert", attempt), "jitter");
        let (speed, hover) = if attempt == 0 {
            (cfg.speed, 0.12)
        } else {
            (cfg.speed * rng.random_range(0.85..1.05), 0.12 + rng.random_range(0.0..0.03))
        };
        let mut p = Planner::new(world, start, speed, cfg.max_steps);
        let planned = match world.kind() {
            TaskKind::PickPlace => pick_place(&mut p, hover),
            TaskKind::Pour => pour(&mut p, hover),
            TaskKind::Rotate => rotate(&mut p, hover),
        };
        match planned {
            Err(e) => last = e,
            Ok(()) if p.actions.len() < 2 => last = "plan too short".into(),
            Ok(()) if world.eval_success(&p.state) => {
                let id = format!("{}-scripted-{seed}", world.kind());
                return Ok(Demonstration::from_rollout(
                    id,
                    world,
                    start,
                    &p.actions,
                    Scene::default(),
                    Provenance::Scripted { seed },
                ));
            }
            Ok(()) => last = "rollout did not reach the goal".into(),
        }
    }
    Err(SimError::ExpertFailed { attempts: cfg.max_attempts.max(1), reason: last })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::replay;
    use crate::sim::TaskSpec;

    #[test]
    fn experts_succeed_on_every_level() {
        for kind in TaskKind::ALL {
            for level in 1..=4 {
                let w = World::new(TaskSpec::new(kind, level));
                for seed in 0..5 {
                    let s = w.reset(seed);
                    let d = scripted_expert(&w, &s, seed, &ExpertConfig::default())
                        .unwrap_or_else(|e| panic!("{kind} L{level} seed {seed}: {e}"));
                    assert!(replay(&d, &w).unwrap().success);
                    assert!(d.actions().iter().all(Action::is_normalized));
                }
            }
        }
    }
}

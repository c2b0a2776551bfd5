//! Sensitivity-weighted pose retargeting.
//!
//! An object pose change ΔT (in the old object frame) is spread over the
//! steps leading up to the grasp: step i receives `exp(c_i · log ΔT)` where
//! `c_i = ψ̄_j / K_j` for its segment j, renormalized over the steps that
//! take part. Each piece is moved into the end-effector frame with the
//! similarity transform by `T_R^O = ee⁻¹ · O_old` and appended to the
//! recorded action. After the grasp, a change of the target pose is spread
//! the same way over the transport steps, so the object arrives at the
//! moved target.

use std::ops::Range;

use super::{verified_demo, AugmentError, SensitivityProfile};
use crate::demo::{Action, AugmentOp, Demonstration};
use crate::se3::{exp_map, log_map, similarity_transform, Pose, PoseDelta, Quat, NEAR_PI_MARGIN};
use crate::sim::{Geometry, WorldState};

const IDENTITY_TOL: f64 = 1e-12;

/// Yaw change reduced modulo the shape's symmetry period, into `(-P/2, P/2]`.
/// Shapes symmetric under any yaw reduce to zero.
pub fn symmetry_reduced(dyaw: f64, geometry: &Geometry) -> f64 {
    match geometry.yaw_period() {
        None => 0.0,
        Some(p) => {
            let r = (dyaw + 0.5 * p).rem_euclid(p) - 0.5 * p;
            if r <= -0.5 * p {
                r + p
            } else {
                r
            }
        }
    }
}

/// Object-frame delta `O_old⁻¹ · O_new` for a planar move, with the yaw part
/// replaced by its smallest equivalent under the geometry's symmetry.
pub fn object_delta(old: &Pose, new: &Pose, geometry: &Geometry) -> PoseDelta {
    let dyaw = symmetry_reduced(new.yaw() - old.yaw(), geometry);
    let effective = Pose::new(old.rotation.mul(&Quat::from_axis_angle([0.0, 0.0, 1.0], dyaw)), new.translation);
    PoseDelta::between(old, &effective)
}

/// Per-step pieces of `delta` for the steps in `range`. The pieces are
/// powers of `delta` whose exponents sum to one.
pub fn per_step_deltas(
    profile: &SensitivityProfile,
    delta: &Pose,
    range: Range<usize>,
) -> Result<Vec<Pose>, AugmentError> {
    if range.is_empty() {
        return Ok(Vec::new());
    }
    let xi = log_map(delta).map_err(|e| AugmentError::Invalid(e.to_string()))?;
    let raw: Vec<f64> = range
        .clone()
        .map(|i| {
            let j = profile.segment_of(i);
            profile.weights[j] / profile.steps[j] as f64
        })
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|c| exp_map(&xi.scaled(c / total))).collect())
}

fn check_delta(d: &Pose) -> Result<(), AugmentError> {
    if d.rotation_angle() >= std::f64::consts::PI - NEAR_PI_MARGIN {
        return Err(AugmentError::Invalid("pose change rotates by π or more; split it first".into()));
    }
    Ok(())
}

fn is_identity(p: &Pose) -> bool {
    p.approx_eq(&Pose::IDENTITY, IDENTITY_TOL)
}

/// First step after which the hand holds something.
fn grasp_step(states: &[WorldState]) -> Option<usize> {
    states.windows(2).position(|w| w[0].grasp.is_none() && w[1].grasp.is_some())
}

/// First step at or after `from` that completes the interaction with the
/// target: the held object is let go or starts pouring.
fn delivery_step(states: &[WorldState], from: usize) -> Option<usize> {
    (from..states.len() - 1).find(|&i| {
        let (a, b) = (&states[i], &states[i + 1]);
        (a.grasp.is_some() && b.grasp.is_none())
            || b.particles_in_bowl + b.particles_spilled > a.particles_in_bowl + a.particles_spilled
    })
}

/// Retargets `demo` to an object moved by `delta` (object frame) and, when
/// given, a target moved by `target_delta` (target frame).
pub fn retarget(
    demo: &Demonstration,
    profile: &SensitivityProfile,
    delta: &PoseDelta,
    target_delta: Option<&PoseDelta>,
) -> Result<Demonstration, AugmentError> {
    let mut start = demo.start_state()?;
    start.objects[0].pose = start.objects[0].pose.compose(&delta.0);
    if let (Some(td), Some(t)) = (target_delta, start.objects.get_mut(1)) {
        t.pose = t.pose.compose(&td.0);
    }
    retarget_to(demo, profile, &start, delta, target_delta, 0)
}

/// As [`retarget`], rolling out from an explicit start state. `seed` only
/// names the output.
pub fn retarget_to(
    demo: &Demonstration,
    profile: &SensitivityProfile,
    new_start: &WorldState,
    delta: &PoseDelta,
    target_delta: Option<&PoseDelta>,
    seed: u64,
) -> Result<Demonstration, AugmentError> {
    let n = demo.len();
    if profile.total_steps() != n {
        return Err(AugmentError::Invalid(format!("profile covers {} steps, demo has {n}", profile.total_steps())));
    }
    check_delta(&delta.0)?;
    if let Some(td) = target_delta {
        check_delta(&td.0)?;
    }
    let world = demo.world();
    let mut states = Vec::with_capacity(n + 1);
    for f in &demo.frames {
        states.push(f.state()?);
    }
    let last = world.step(states.last().expect("nonempty"), &demo.frames[n - 1].action);
    states.push(last);

    let old_obj = states[0].objects[0].pose;
    let world_move = old_obj.compose(&delta.0).compose(&old_obj.inverse());

    let grasp = grasp_step(&states);
    let phase_a = 0..grasp.map_or(n, |g| g + 1);
    let pieces_a = per_step_deltas(profile, &delta.0, phase_a.clone())?;

    // World-frame correction still owed after the grasp.
    let residual = match (world.task.kind.has_target(), states[0].target()) {
        (true, Some(t)) => {
            let target_move = match target_delta {
                Some(td) => t.pose.compose(&td.0).compose(&t.pose.inverse()),
                None => Pose::IDENTITY,
            };
            Some(target_move.compose(&world_move.inverse()))
        }
        _ => None,
    };
    let phase_b = match (grasp, residual) {
        (Some(g), Some(_)) => (g + 1)..delivery_step(&states, g + 1).map_or(n, |e| e + 1),
        _ => n..n,
    };
    let pieces_b = match residual {
        Some(r) if !phase_b.is_empty() => {
            check_delta(&r)?;
            per_step_deltas(profile, &r, phase_b.clone())?
        }
        _ => Vec::new(),
    };

    let unchanged = is_identity(&delta.0) && residual.is_none_or(|r| is_identity(&r));
    let scale = demo.action_scale;
    let actions: Vec<Action> = if unchanged {
        demo.actions()
    } else {
        (0..n)
            .map(|i| {
                let a = &demo.frames[i].action;
                // Frame after the step: with it the corrected hand poses telescope exactly.
                let ee_next = states[i + 1].ee_pose;
                let correction = if phase_a.contains(&i) {
                    let frame = ee_next.inverse().compose(&old_obj);
                    similarity_transform(&frame, &PoseDelta(pieces_a[i - phase_a.start]))
                } else if phase_b.contains(&i) {
                    let frame = ee_next.inverse().compose(&world_move.inverse());
                    similarity_transform(&frame, &PoseDelta(pieces_b[i - phase_b.start]))
                } else {
                    return a.clone();
                };
                let step = exp_map(&scale.to_twist(&a.clamped_ee())).compose(&correction.0);
                let xi = log_map(&step).expect("per-step motion is far from a half turn");
                Action::new(scale.from_twist(&xi), a.fingers.clone())
            })
            .collect()
    };

    verified_demo(demo, &world, new_start, &actions, demo.scene.clone(), AugmentOp::Retarget, seed)
        .map_err(AugmentError::RetargetReplayFailed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::Twist;
    use std::f64::consts::PI;

    #[test]
    fn symmetry_reduction() {
        let cyl = Geometry::Cylinder { radius: 0.03, half_height: 0.06 };
        assert_eq!(symmetry_reduced(1.0, &cyl), 0.0);
        let cube = Geometry::Box { half_extents: [0.025; 3] };
        assert!((symmetry_reduced(100f64.to_radians(), &cube) - 10f64.to_radians()).abs() < 1e-12);
        let tri = Geometry::Valve { blades: 3 };
        assert!((symmetry_reduced(-100f64.to_radians(), &tri) - 20f64.to_radians()).abs() < 1e-12);
        assert!((symmetry_reduced(PI / 4.0, &cube) - PI / 4.0).abs() < 1e-12);
    }

    #[test]
    fn pieces_compose_to_whole() {
        let profile = SensitivityProfile::from_max_delta(vec![3, 3, 4], vec![0.2, 0.9, 0.0]);
        let d = exp_map(&Twist::new([0.1, -0.4, 0.7], [0.05, 0.02, -0.1]));
        let pieces = per_step_deltas(&profile, &d, 0..10).unwrap();
        let total = pieces.iter().fold(Pose::IDENTITY, |acc, p| acc.compose(p));
        assert!(total.approx_eq(&d, 1e-9));
    }
}

//! Whole-trajectory relocation and the grasp-interpolation baseline.
//!
//! Both operators move the hand to the relocated trajectory along a straight
//! line in twist coordinates and then replay recorded actions unchanged.

use super::{verified_demo, AugmentError};
use crate::demo::{Action, ActionScale, AugmentOp, Demonstration};
use crate::se3::{log_map, split_delta, Pose};
use crate::sim::{World, WorldState};

/// New poses for the manipulated object and, optionally, the target. A
/// missing target moves rigidly with the object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relocation {
    pub object: Pose,
    pub target: Option<Pose>,
}

impl Relocation {
    pub fn object(object: Pose) -> Relocation {
        Relocation { object, target: None }
    }
}

/// Actions moving the hand from `from` to `to` in equal steps of one
/// constant body twist, each within the normalized bounds.
pub(crate) fn reach_actions(scale: &ActionScale, from: &Pose, to: &Pose, fingers: &[f64]) -> Vec<Action> {
    let (piece, count) = split_delta(&from.inverse().compose(to));
    let xi = log_map(&piece).expect("split pieces rotate less than a quarter turn");
    let n = scale.from_twist(&xi);
    let m = n.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m < 1e-12 {
        return Vec::new();
    }
    let steps = m.ceil() as usize;
    let a = Action::new(n.map(|v| v / steps as f64), fingers.to_vec());
    vec![a; steps * count]
}

struct Relocated {
    world: World,
    start: WorldState,
    states: Vec<WorldState>,
    world_move: Pose,
    unchanged: bool,
}

fn relocate_start(demo: &Demonstration, reloc: &Relocation) -> Result<Relocated, AugmentError> {
    let world = demo.world();
    let states: Vec<WorldState> = demo.frames.iter().map(|f| f.state()).collect::<Result<_, _>>()?;
    let mut start = states[0].clone();
    let old = start.objects[0].pose;
    let world_move = reloc.object.compose(&old.inverse());
    start.objects[0].pose = reloc.object;
    let mut target_same = true;
    if let Some(t) = start.objects.get_mut(1) {
        let new_t = reloc.target.unwrap_or_else(|| world_move.compose(&t.pose));
        target_same = new_t.approx_eq(&t.pose, 1e-12);
        t.pose = new_t;
    }
    let unchanged = world_move.approx_eq(&Pose::IDENTITY, 1e-12) && target_same;
    for o in &start.objects {
        let [x, y, _] = o.pose.translation;
        if !world.in_workspace(&Pose::from_translation([x, y, 0.0])) {
            return Err(AugmentError::UnreachablePose);
        }
    }
    Ok(Relocated { world, start, states, world_move, unchanged })
}

fn check_reachable(world: &World, states: &[WorldState], world_move: &Pose) -> Result<(), AugmentError> {
    if states.iter().all(|s| world.in_workspace(&world_move.compose(&s.ee_pose))) {
        Ok(())
    } else {
        Err(AugmentError::UnreachablePose)
    }
}

/// Moves the hand from its recorded start to the start pose shifted with
/// the object, then replays every recorded action.
pub fn naive_relocate(demo: &Demonstration, reloc: &Relocation) -> Result<Demonstration, AugmentError> {
    let r = relocate_start(demo, reloc)?;
    if r.unchanged {
        return Ok(demo.clone());
    }
    check_reachable(&r.world, &r.states, &r.world_move)?;
    let ee0 = r.states[0].ee_pose;
    let mut actions = reach_actions(&demo.action_scale, &ee0, &r.world_move.compose(&ee0), &r.states[0].finger_values);
    actions.extend(demo.actions());
    verified_demo(demo, &r.world, &r.start, &actions, demo.scene.clone(), AugmentOp::Relocate, 0)
        .map_err(AugmentError::ReplayFailed)
}

/// Index of the first frame whose action closes the hand.
pub(crate) fn pre_grasp_frame(demo: &Demonstration, states: &[WorldState], threshold: f64) -> Option<usize> {
    demo.frames.iter().zip(states).position(|(f, s)| {
        let closes = f.action.fingers.first().is_some_and(|a| *a < threshold);
        closes && s.aperture() >= threshold
    })
}

/// Interpolates from the recorded start straight to the shifted pre-grasp
/// pose, then replays the recorded actions from the grasp on.
pub fn interpolation_baseline(demo: &Demonstration, reloc: &Relocation) -> Result<Demonstration, AugmentError> {
    let r = relocate_start(demo, reloc)?;
    let g = pre_grasp_frame(demo, &r.states, r.world.config.grasp_threshold).ok_or(AugmentError::NoGraspEvent)?;
    if r.unchanged {
        return Ok(demo.clone());
    }
    check_reachable(&r.world, &r.states[g..], &r.world_move)?;
    let ee0 = r.states[0].ee_pose;
    let goal = r.world_move.compose(&r.states[g].ee_pose);
    let mut actions = reach_actions(&demo.action_scale, &ee0, &goal, &r.states[g].finger_values);
    actions.extend(demo.frames[g..].iter().map(|f| f.action.clone()));
    verified_demo(demo, &r.world, &r.start, &actions, demo.scene.clone(), AugmentOp::Interpolate, 0)
        .map_err(AugmentError::ReplayFailed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{exp_map, Twist};

    #[test]
    fn reach_respects_bounds_and_arrives() {
        let scale = ActionScale::default();
        let from = Pose::from_translation([0.0, 0.0, 0.2]);
        let to = exp_map(&Twist::new([0.2, -0.1, 2.5], [0.13, -0.2, 0.05])).compose(&from);
        let acts = reach_actions(&scale, &from, &to, &[1.0, 0.0]);
        assert!(acts.iter().all(Action::is_normalized));
        let end = acts.iter().fold(from, |p, a| p.compose(&exp_map(&scale.to_twist(&a.ee_delta))));
        assert!(end.approx_eq(&to, 1e-9));
        assert!(reach_actions(&scale, &from, &from, &[1.0]).is_empty());
    }
}

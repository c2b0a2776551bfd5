//! Merging runs of near-stationary steps into single steps.

use super::AugmentError;
use crate::demo::{Action, AugmentOp, Demonstration};
use crate::se3::{exp_map, log_map, Pose};

fn is_small(a: &Action, prev_fingers: &[f64], demo: &Demonstration, ee_eps: f64, finger_eps: f64) -> bool {
    let t = demo.action_scale.to_twist(&a.clamped_ee());
    let ee_small = t.angular.iter().chain(&t.linear).all(|v| v.abs() < ee_eps);
    let fingers_small = a.fingers.iter().zip(prev_fingers).all(|(x, y)| (x - y).abs() < finger_eps);
    ee_small && fingers_small
}

/// Merges maximal runs of consecutive steps whose EE delta components are
/// all below `ee_epsilon` (m or rad per step) and whose finger targets move
/// less than `finger_epsilon`. A merged step carries the composed motion and
/// the run's last finger target. Runs are cut where the composed motion would
/// leave the normalized action range. If the merged demo no longer succeeds
/// the input is returned unchanged.
pub fn aggregate_small_motions(
    demo: &Demonstration,
    ee_epsilon: f64,
    finger_epsilon: f64,
) -> Result<Demonstration, AugmentError> {
    if ee_epsilon < 0.0 || finger_epsilon < 0.0 {
        return Err(AugmentError::Invalid("thresholds must be nonnegative".into()));
    }
    let start = demo.start_state()?;
    let scale = demo.action_scale;
    let n = demo.len();
    let mut merged: Vec<Action> = Vec::with_capacity(n);
    let mut i = 0;
    let mut prev_fingers = start.finger_values.clone();
    while i < n {
        let a = &demo.frames[i].action;
        if !is_small(a, &prev_fingers, demo, ee_epsilon, finger_epsilon) {
            merged.push(a.clone());
            prev_fingers = a.fingers.clone();
            i += 1;
            continue;
        }
        let mut motion = exp_map(&scale.to_twist(&a.clamped_ee()));
        let mut last = a.clone();
        let mut j = i + 1;
        while j < n {
            let b = &demo.frames[j].action;
            if !is_small(b, &last.fingers, demo, ee_epsilon, finger_epsilon) {
                break;
            }
            let next: Pose = motion.compose(&exp_map(&scale.to_twist(&b.clamped_ee())));
            let fits = log_map(&next).is_ok_and(|xi| scale.from_twist(&xi).iter().all(|v| v.abs() <= 1.0));
            if !fits {
                break;
            }
            motion = next;
            last = b.clone();
            j += 1;
        }
        let xi = log_map(&motion).expect("merged motion stays within one step's range");
        merged.push(Action::new(scale.from_twist(&xi), last.fingers.clone()));
        prev_fingers = last.fingers;
        i = j;
    }
    if merged.len() == n {
        return Ok(demo.clone());
    }
    let world = demo.world();
    let seed = merged.len() as u64;
    Ok(super::verified_demo(demo, &world, &start, &merged, demo.scene.clone(), AugmentOp::Aggregate, seed)
        .unwrap_or_else(|_| demo.clone()))
}

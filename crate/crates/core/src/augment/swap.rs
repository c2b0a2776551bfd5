//! Swapping the manipulated object and searching for actions that still work.

use rand_distr::{Distribution, StandardNormal};

use super::{verified_demo, with_geometry, AugmentConfig, AugmentError};
use crate::demo::{AugmentOp, Demonstration};
use crate::seed;
use crate::sim::{Geometry, World};

/// Replaces the object with `geometry` and tries noisy copies of the
/// recorded actions, `a + σ·ε` with ε standard normal per dimension, until
/// one succeeds. Attempt 0 uses the recorded actions unchanged.
pub fn swap_object_resample(
    demo: &Demonstration,
    geometry: Geometry,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Demonstration, AugmentError> {
    if !geometry.is_graspable() {
        return Err(AugmentError::Invalid(format!("{geometry:?} cannot be manipulated")));
    }
    let old = demo.world();
    let world = World::with_config(demo.task.with_object(geometry), old.config.clone());
    let start = with_geometry(&demo.start_state()?, geometry);
    let base = demo.actions();
    let sigma = cfg.object_noise_sigma;
    for attempt in 0..cfg.max_attempts {
        let mut actions = base.clone();
        if attempt > 0 && sigma > 0.0 {
            let mut rng = seed::rng(seed::derive_indexed(seed, "swap", attempt));
            for a in &mut actions {
                for v in a.ee_delta.iter_mut().chain(a.fingers.iter_mut()) {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    *v += sigma * eps;
                }
                a.ee_delta = a.clamped_ee();
            }
        }
        if !world.eval_success(&world.rollout(&start, &actions)) {
            continue;
        }
        let d = verified_demo(demo, &world, &start, &actions, demo.scene.clone(), AugmentOp::Swap, seed)
            .map_err(AugmentError::ReplayFailed)?;
        return Ok(d);
    }
    Err(AugmentError::ExhaustedAttempts { attempts: cfg.max_attempts })
}

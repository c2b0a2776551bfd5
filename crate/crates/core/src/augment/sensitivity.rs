//! Per-segment action sensitivity.
//!
//! The trajectory is cut into M segments. For each segment the noise scale δ
//! is raised along a fixed grid while every trial at that δ still succeeds;
//! the last passing δ is the segment's tolerance. Tolerant segments later
//! absorb more of a pose change.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AugmentConfig;
use crate::demo::{Action, Demonstration};
use crate::seed;
use crate::sim::{World, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    /// Steps per segment; the last segment absorbs any remainder.
    pub steps: Vec<usize>,
    pub max_delta: Vec<f64>,
    pub psi: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SensitivityProfile {
    pub fn from_max_delta(steps: Vec<usize>, max_delta: Vec<f64>) -> SensitivityProfile {
        let psi: Vec<f64> = max_delta.iter().map(|d| d.exp()).collect();
        let total: f64 = psi.iter().sum();
        let weights = psi.iter().map(|p| p / total).collect();
        SensitivityProfile { steps, max_delta, psi, weights }
    }

    /// Profile with equal tolerance everywhere.
    pub fn uniform(n: usize, m: usize) -> SensitivityProfile {
        let steps = segment_lengths(n, m);
        let len = steps.len();
        SensitivityProfile::from_max_delta(steps, vec![0.0; len])
    }

    pub fn segments(&self) -> usize {
        self.steps.len()
    }

    pub fn total_steps(&self) -> usize {
        self.steps.iter().sum()
    }

    /// Half-open step range of segment `j`.
    pub fn bounds(&self, j: usize) -> (usize, usize) {
        let start: usize = self.steps[..j].iter().sum();
        (start, start + self.steps[j])
    }

    /// Segment index of step `i`.
    pub fn segment_of(&self, i: usize) -> usize {
        let mut acc = 0;
        for (j, k) in self.steps.iter().enumerate() {
            acc += k;
            if i < acc {
                return j;
            }
        }
        self.steps.len() - 1
    }
}

/// `n` steps in `m` segments of `n / m`, the last taking the remainder.
/// `m` is capped at `n` so no segment is empty.
pub fn segment_lengths(n: usize, m: usize) -> Vec<usize> {
    let m = m.clamp(1, n.max(1));
    let k = n / m;
    let mut v = vec![k; m];
    v[m - 1] = n - k * (m - 1);
    v
}

/// One perturbed candidate trajectory.
pub struct Probe<'a> {
    pub segment: usize,
    pub delta: f64,
    pub trial: usize,
    pub actions: &'a [Action],
}

pub trait Evaluator: Sync {
    fn succeeds(&self, probe: &Probe) -> bool;
}

/// Rolls the probe out in the simulator and asks the task oracle.
pub struct RolloutEvaluator<'a> {
    pub world: &'a World,
    pub start: &'a WorldState,
}

impl Evaluator for RolloutEvaluator<'_> {
    fn succeeds(&self, probe: &Probe) -> bool {
        self.world.eval_success(&self.world.rollout(self.start, probe.actions))
    }
}

impl<F: Fn(&Probe) -> bool + Sync> Evaluator for F {
    fn succeeds(&self, probe: &Probe) -> bool {
        self(probe)
    }
}

/// Sensitivity of `actions` split into `m` segments. Only EE dimensions are
/// perturbed, by `δ · ε` with ε standard normal per dimension and step.
pub fn estimate_sensitivity_with(
    actions: &[Action],
    evaluator: &dyn Evaluator,
    m: usize,
    cfg: &AugmentConfig,
    seed: u64,
) -> SensitivityProfile {
    let steps = segment_lengths(actions.len(), m);
    let grid_len = if cfg.delta_step > 0.0 { (cfg.delta_cap / cfg.delta_step + 1e-9).floor() as usize } else { 0 };
    let bounds: Vec<(usize, usize)> = (0..steps.len())
        .map(|j| {
            let start: usize = steps[..j].iter().sum();
            (start, start + steps[j])
        })
        .collect();

    let max_delta: Vec<f64> = bounds
        .par_iter()
        .enumerate()
        .map(|(j, &(lo, hi))| {
            let seg_seed = seed::derive_indexed(seed, "sensitivity", j);
            let mut passed = 0.0;
            for g in 1..=grid_len {
                let delta = g as f64 * cfg.delta_step;
                let all_pass = (0..cfg.trials_per_delta.max(1)).all(|trial| {
                    let mut rng = seed::rng_for(seg_seed, &format!("{g}/{trial}"));
                    let mut probe_actions = actions.to_vec();
                    for a in &mut probe_actions[lo..hi] {
                        for v in &mut a.ee_delta {
                            let eps: f64 = StandardNormal.sample(&mut rng);
                            *v += delta * eps;
                        }
                    }
                    evaluator.succeeds(&Probe { segment: j, delta, trial, actions: &probe_actions })
                });
                if !all_pass {
                    break;
                }
                passed = delta;
            }
            passed
        })
        .collect();
    SensitivityProfile::from_max_delta(steps, max_delta)
}

/// Sensitivity of a stored demo measured by simulator rollouts.
pub fn estimate_sensitivity(
    demo: &Demonstration,
    world: &World,
    m: usize,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<SensitivityProfile, super::AugmentError> {
    let start = demo.start_state()?;
    let actions = demo.actions();
    let eval = RolloutEvaluator { world, start: &start };
    Ok(estimate_sensitivity_with(&actions, &eval, m, cfg, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn actions(n: usize) -> Vec<Action> {
        vec![Action::hold(&[1.0, 0.0]); n]
    }

    #[test]
    fn always_succeeding_evaluator_hits_cap() {
        let cfg = AugmentConfig::default();
        let p = estimate_sensitivity_with(&actions(20), &|_: &Probe| true, 4, &cfg, 0);
        assert!(p.max_delta.iter().all(|d| (d - cfg.delta_cap).abs() < 1e-12));
        assert!(p.weights.iter().all(|w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn failing_segment_gets_zero() {
        let cfg = AugmentConfig::default();
        let p = estimate_sensitivity_with(&actions(30), &|pr: &Probe| pr.segment != 2, 3, &cfg, 0);
        assert_eq!(p.max_delta[2], 0.0);
        assert_eq!(p.psi[2], 1.0);
    }

    #[test]
    fn weights_normalize_psi() {
        let p = SensitivityProfile::from_max_delta(vec![1, 1], vec![2f64.ln(), 6f64.ln()]);
        assert!((p.weights[0] - 0.25).abs() < 1e-15);
        assert!((p.weights[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn remainder_goes_to_last_segment() {
        assert_eq!(segment_lengths(23, 10), vec![2, 2, 2, 2, 2, 2, 2, 2, 2, 5]);
        assert_eq!(segment_lengths(3, 10), vec![1, 1, 1]);
        let p = SensitivityProfile::uniform(23, 10);
        assert_eq!(p.bounds(9), (18, 23));
        assert_eq!(p.segment_of(22), 9);
        assert_eq!(p.segment_of(17), 8);
    }
}

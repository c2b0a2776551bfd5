//! Level-conditioned batch generation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    estimate_sensitivity, object_delta, randomize_light_texture, retarget_to, AugmentConfig, AugmentError,
    SensitivityProfile,
};
use crate::demo::Demonstration;
use crate::se3::PoseDelta;
use crate::seed;
use crate::sim::{LevelRanges, Placement, WorldState};

/// A source demonstration with its precomputed sensitivity profile.
#[derive(Debug, Clone)]
pub struct SeedDemo {
    pub demo: Demonstration,
    pub profile: SensitivityProfile,
    pub placement: Placement,
}

impl SeedDemo {
    pub fn prepare(demo: Demonstration, cfg: &AugmentConfig, seed: u64) -> Result<SeedDemo, AugmentError> {
        let world = demo.world();
        let profile = estimate_sensitivity(&demo, &world, cfg.segments, cfg, seed::derive_seed(seed, &demo.id))?;
        let placement = demo.start_state()?.placement();
        Ok(SeedDemo { demo, profile, placement })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub attempts: usize,
    pub successes: usize,
}

impl GenerationStats {
    /// Verified successes per attempt; zero when nothing was attempted.
    pub fn rate(&self) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.successes as f64 / self.attempts as f64
        }
    }

    pub fn merge(&mut self, other: GenerationStats) {
        self.attempts += other.attempts;
        self.successes += other.successes;
    }
}

/// A start state for `demo` with object (and target) poses drawn from
/// `ranges` shrunk to `pose_scale` around the demo's own placement. The hand
/// and fingers start where the demo's do.
pub fn sample_start(
    demo: &Demonstration,
    ranges: &LevelRanges,
    pose_scale: f64,
    seed: u64,
) -> Result<WorldState, AugmentError> {
    let kind = demo.task.kind;
    let old = demo.start_state()?;
    let anchor = old.placement();
    let mut rng = seed::rng_for(seed, "placement");
    let placement = ranges.scaled(kind, pose_scale, Some(&anchor)).sample(kind, Some(&anchor), &mut rng);
    let mut start = demo.world().state_from_placement(&placement);
    start.ee_pose = old.ee_pose;
    start.finger_values = old.finger_values.clone();
    start.rng_state = seed;
    Ok(start)
}

/// Symmetry-reduced object delta and target delta between two starts.
pub fn start_deltas(old: &WorldState, new: &WorldState) -> (PoseDelta, Option<PoseDelta>) {
    let delta = object_delta(&old.objects[0].pose, &new.objects[0].pose, &old.objects[0].geometry);
    let target_delta = match (old.target(), new.target()) {
        (Some(a), Some(b)) => Some(PoseDelta::between(&a.pose, &b.pose)),
        _ => None,
    };
    (delta, target_delta)
}

fn generate_one(
    sd: &SeedDemo,
    ranges: &LevelRanges,
    level: u8,
    cfg: &AugmentConfig,
    item_seed: u64,
) -> Result<Demonstration, AugmentError> {
    let demo = &sd.demo;
    let start = sample_start(demo, ranges, cfg.pose_scale, item_seed)?;
    let (delta, target_delta) = start_deltas(&demo.start_state()?, &start);
    let out = retarget_to(demo, &sd.profile, &start, &delta, target_delta.as_ref(), item_seed)?;
    if level >= 2 {
        let visual =
            AugmentConfig { light_scale: ranges.light_scale, texture_scale: ranges.light_scale, ..cfg.clone() };
        return randomize_light_texture(&out, &visual, seed::derive_seed(item_seed, "light"));
    }
    Ok(out)
}

/// Generates `count` verified demos for `level` from the seed demos, cycling
/// through them. Level 1 retargets within small pose ranges, level 2 adds
/// light and texture randomization, level 3 also moves the target, level 4
/// widens the ranges.
pub fn generate_level_batch(
    seeds: &[SeedDemo],
    level: u8,
    count: usize,
    cfg: &AugmentConfig,
    seed: u64,
) -> (Vec<Demonstration>, GenerationStats) {
    let Some(first) = seeds.first() else { return (Vec::new(), GenerationStats::default()) };
    let ranges = LevelRanges::defaults(first.demo.task.kind, level);
    generate_batch(seeds, &ranges, level, count, cfg, seed)
}

/// As [`generate_level_batch`] with explicit ranges.
pub fn generate_batch(
    seeds: &[SeedDemo],
    ranges: &LevelRanges,
    level: u8,
    count: usize,
    cfg: &AugmentConfig,
    seed: u64,
) -> (Vec<Demonstration>, GenerationStats) {
    if seeds.is_empty() {
        return (Vec::new(), GenerationStats::default());
    }
    let results: Vec<Option<Demonstration>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let item_seed = seed::derive_indexed(seed, "generate", i);
            generate_one(&seeds[i % seeds.len()], ranges, level, cfg, item_seed).ok()
        })
        .collect();
    let stats = GenerationStats { attempts: count, successes: results.iter().filter(|r| r.is_some()).count() };
    (results.into_iter().flatten().collect(), stats)
}

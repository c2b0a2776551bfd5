//! Automatic curriculum over augmentation levels 0..=4.
//!
//! Each cycle appends a batch generated at the current level, fits the
//! learner on everything collected so far and evaluates it. A passing check
//! (or too many failures) moves to the next level; a failing one generates
//! more data at the same level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use thiserror::Error;

use crate::augment::{generate_batch, randomized_scene, AugmentConfig, AugmentError, GenerationStats, SeedDemo};
use crate::demo::Demonstration;
use crate::learner::{rollout_policy, LearnError, NnLearner, NnPolicy, Policy};
use crate::render::Scene;
use crate::seed;
use crate::sim::{LevelRanges, TaskSpec, World, WorldState};

pub const MAX_LEVEL: u8 = 4;

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("no human demonstrations")]
    NoHumanDemos,
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    TaskSuccess,
    DataRate,
    /// Level pinned at 4; only the randomness scale grows.
    DataRateNoCurriculum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Success averaged over levels 1..=4.
    Averaged,
    /// Success at the current level only (level 0 uses level-1 ranges with
    /// zero width).
    CurrentLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumConfig {
    pub r_up: f64,
    pub g_up: f64,
    pub n_max: u32,
    /// Episodes per evaluated level.
    pub eval_episodes: usize,
    pub demos_per_generation: usize,
    pub criterion: Criterion,
    pub eval_mode: EvalMode,
    pub randomness_variance_per_cycle: f64,
    pub max_cycles: usize,
    /// Randomness scale used by the curriculum modes (0..=10).
    pub scale: f64,
    pub max_steps: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        CurriculumConfig {
            r_up: 0.15,
            g_up: 0.30,
            n_max: 5,
            eval_episodes: 50,
            demos_per_generation: 50,
            criterion: Criterion::TaskSuccess,
            eval_mode: EvalMode::Averaged,
            randomness_variance_per_cycle: 0.2,
            max_cycles: 300,
            scale: 10.0,
            max_steps: 800,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<(), CurriculumError> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.r_up) || !unit(self.g_up) {
            return Err(CurriculumError::Invalid("thresholds must lie in (0, 1]".into()));
        }
        if self.n_max == 0 {
            return Err(CurriculumError::Invalid("n_max must be at least 1".into()));
        }
        if !(0.0..=10.0).contains(&self.scale) || self.randomness_variance_per_cycle < 0.0 {
            return Err(CurriculumError::Invalid("scale must lie in [0, 10] and grow by a nonnegative step".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CurriculumConfig, CurriculumError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CurriculumError::Invalid(format!("{}: {e}", path.display())))?;
        let cfg: CurriculumConfig = serde_json::from_str(&text).map_err(|e| CurriculumError::Invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn threshold(&self) -> f64 {
        match self.criterion {
            Criterion::TaskSuccess => self.r_up,
            Criterion::DataRate | Criterion::DataRateNoCurriculum => self.g_up,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub r_succ: f64,
    pub per_level: BTreeMap<u8, f64>,
    /// Generation rate of the batch appended at the top of the cycle.
    pub g_rate: f64,
}

impl EvalReport {
    fn metric(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::TaskSuccess => self.r_succ,
            Criterion::DataRate | Criterion::DataRateNoCurriculum => self.g_rate,
        }
    }
}

/// One line of the run log. `L` and `N_fail` are the values after the
/// cycle's decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    #[serde(rename = "L")]
    pub level: u8,
    #[serde(rename = "N_fail")]
    pub n_fail: u32,
    pub r_succ: f64,
    pub g_rate: f64,
    pub dataset_size: usize,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct CurriculumState {
    pub level: u8,
    pub n_fail: u32,
    pub dataset: Vec<Demonstration>,
    pub human_demos: Vec<Demonstration>,
    pub cycle: usize,
    pub scale: f64,
    pub history: Vec<CycleRecord>,
    ids: BTreeSet<String>,
}

impl CurriculumState {
    pub fn new(human_demos: Vec<Demonstration>, cfg: &CurriculumConfig) -> CurriculumState {
        let (level, scale) = match cfg.criterion {
            Criterion::DataRateNoCurriculum => (MAX_LEVEL, 0.0),
            _ => (0, cfg.scale),
        };
        CurriculumState {
            level,
            n_fail: 0,
            dataset: Vec::new(),
            human_demos,
            cycle: 0,
            scale,
            history: Vec::new(),
            ids: BTreeSet::new(),
        }
    }

    /// Adds demos not already present (by id).
    pub fn extend(&mut self, demos: Vec<Demonstration>) {
        for d in demos {
            if self.ids.insert(d.id.clone()) {
                self.dataset.push(d);
            }
        }
    }

    pub fn finished(&self, cfg: &CurriculumConfig) -> bool {
        self.level > MAX_LEVEL || self.cycle >= cfg.max_cycles
    }
}

/// Produces augmented demos for a level.
pub trait DemoSource {
    fn generate(&mut self, level: u8, scale: f64, count: usize, seed: u64) -> (Vec<Demonstration>, GenerationStats);
}

/// Fits a policy and measures its success rate.
pub trait Trainer {
    fn fit(&mut self, dataset: &[Demonstration]) -> Result<(), CurriculumError>;
    /// Success fraction over `episodes` starts drawn at `level` and `scale`.
    fn success_rate(&self, level: u8, scale: f64, episodes: usize, seed: u64) -> f64;
}

/// `aug_L(D_h)`: level 0 is the human demos verbatim.
fn generate_for(
    state: &CurriculumState,
    source: &mut dyn DemoSource,
    count: usize,
    seed: u64,
) -> (Vec<Demonstration>, GenerationStats) {
    if state.level == 0 {
        let n = state.human_demos.len();
        (state.human_demos.clone(), GenerationStats { attempts: n, successes: n })
    } else {
        source.generate(state.level, state.scale, count, seed)
    }
}

/// The decision at the end of a cycle. Passing (or exhausting the failure
/// budget) moves to the next level; failing appends more data at the
/// current level.
pub fn advance(
    mut state: CurriculumState,
    report: &EvalReport,
    cfg: &CurriculumConfig,
    source: &mut dyn DemoSource,
    seed: u64,
) -> CurriculumState {
    let pass = report.metric(cfg.criterion) >= cfg.threshold() || state.n_fail >= cfg.n_max;
    if pass {
        if cfg.criterion != Criterion::DataRateNoCurriculum {
            state.level += 1;
        }
        state.n_fail = 0;
    } else {
        let more_seed = seed::derive_indexed(seed, "more", state.cycle);
        let (more, _) = generate_for(&state, source, cfg.demos_per_generation, more_seed);
        state.extend(more);
        state.n_fail += 1;
    }
    if cfg.criterion == Criterion::DataRateNoCurriculum {
        state.scale = (state.scale + cfg.randomness_variance_per_cycle).min(cfg.scale);
    }
    state
}

fn evaluate(
    trainer: &dyn Trainer,
    state: &CurriculumState,
    cfg: &CurriculumConfig,
    g_rate: f64,
    seed: u64,
) -> EvalReport {
    let levels: Vec<u8> = match cfg.eval_mode {
        EvalMode::Averaged => (1..=MAX_LEVEL).collect(),
        EvalMode::CurrentLevel => vec![state.level],
    };
    let eval_scale = if cfg.criterion == Criterion::DataRateNoCurriculum { cfg.scale } else { state.scale };
    let per_level: BTreeMap<u8, f64> = levels
        .iter()
        .map(|&l| {
            let s = if l == 0 { 0.0 } else { eval_scale };
            (l, trainer.success_rate(l, s, cfg.eval_episodes, seed::derive_indexed(seed, "eval", l as usize)))
        })
        .collect();
    let r_succ = per_level.values().sum::<f64>() / per_level.len() as f64;
    EvalReport { r_succ, per_level, g_rate }
}

/// Runs the loop until every level has been passed or `max_cycles` is hit.
/// `on_cycle` sees each log record as it is produced.
pub fn run(
    trainer: &mut dyn Trainer,
    source: &mut dyn DemoSource,
    human_demos: Vec<Demonstration>,
    cfg: &CurriculumConfig,
    seed: u64,
    on_cycle: &mut dyn FnMut(&CycleRecord),
) -> Result<CurriculumState, CurriculumError> {
    cfg.validate()?;
    if human_demos.is_empty() {
        return Err(CurriculumError::NoHumanDemos);
    }
    let mut state = CurriculumState::new(human_demos, cfg);
    let eval_seed = seed::derive_seed(seed, "eval");
    while !state.finished(cfg) {
        let batch_seed = seed::derive_indexed(seed, "generate", state.cycle);
        let (batch, stats) = generate_for(&state, source, cfg.demos_per_generation, batch_seed);
        state.extend(batch);
        trainer.fit(&state.dataset)?;
        let report = evaluate(trainer, &state, cfg, stats.rate(), eval_seed);
        let cycle = state.cycle;
        state = advance(state, &report, cfg, source, seed);
        let record = CycleRecord {
            cycle,
            level: state.level,
            n_fail: state.n_fail,
            r_succ: report.r_succ,
            g_rate: report.g_rate,
            dataset_size: state.dataset.len(),
            scale: state.scale,
        };
        on_cycle(&record);
        state.history.push(record);
        state.cycle += 1;
    }
    Ok(state)
}

/// [`DemoSource`] backed by sensitivity-aware retargeting of prepared seeds.
pub struct AugmentSource {
    pub seeds: Vec<SeedDemo>,
    pub config: AugmentConfig,
}

impl AugmentSource {
    pub fn new(human_demos: &[Demonstration], config: AugmentConfig, seed: u64) -> Result<AugmentSource, AugmentError> {
        let seeds =
            human_demos.iter().map(|d| SeedDemo::prepare(d.clone(), &config, seed)).collect::<Result<Vec<_>, _>>()?;
        Ok(AugmentSource { seeds, config })
    }
}

impl DemoSource for AugmentSource {
    fn generate(&mut self, level: u8, scale: f64, count: usize, seed: u64) -> (Vec<Demonstration>, GenerationStats) {
        let Some(first) = self.seeds.first() else { return (Vec::new(), GenerationStats::default()) };
        let ranges = LevelRanges::defaults(first.demo.task.kind, level);
        let cfg = AugmentConfig { pose_scale: scale, ..self.config.clone() };
        generate_batch(&self.seeds, &ranges, level, count, &cfg, seed)
    }
}

/// An evaluation start: a world at `level`'s ranges shrunk to `scale`, and
/// a scene with that level's light and texture randomization.
pub fn eval_episode(template: &World, level: u8, scale: f64, seed: u64) -> (World, WorldState, Scene) {
    let kind = template.task.kind;
    let ranges = LevelRanges::defaults(kind, level.max(1)).scaled(kind, scale, None);
    let task = TaskSpec { ranges, ..template.task };
    let world = World::with_config(task, template.config.clone());
    let start = world.reset(seed);
    let scene = if ranges.light_scale > 0.0 {
        randomized_scene(&Scene::default(), ranges.light_scale, ranges.light_scale, seed)
    } else {
        Scene::default()
    };
    (world, start, scene)
}

/// Success fraction of `policy` over `episodes` evaluation starts.
pub fn evaluate_policy(
    policy: &dyn Policy,
    template: &World,
    level: u8,
    scale: f64,
    episodes: usize,
    max_steps: usize,
    seed: u64,
) -> f64 {
    if episodes == 0 {
        return 0.0;
    }
    let wins = (0..episodes)
        .into_par_iter()
        .filter(|&i| {
            let (world, start, scene) = eval_episode(template, level, scale, seed::derive_indexed(seed, "episode", i));
            rollout_policy(policy, &world, &start, &scene, max_steps).success
        })
        .count();
    wins as f64 / episodes as f64
}

/// [`Trainer`] for the nearest-neighbor learner.
pub struct NnTrainer {
    pub learner: NnLearner,
    pub template: World,
    pub max_steps: usize,
    pub policy: Option<NnPolicy>,
}

impl NnTrainer {
    pub fn new(learner: NnLearner, template: World, max_steps: usize) -> NnTrainer {
        NnTrainer { learner, template, max_steps, policy: None }
    }
}

impl Trainer for NnTrainer {
    fn fit(&mut self, dataset: &[Demonstration]) -> Result<(), CurriculumError> {
        self.policy = Some(self.learner.fit(dataset)?);
        Ok(())
    }

    fn success_rate(&self, level: u8, scale: f64, episodes: usize, seed: u64) -> f64 {
        match &self.policy {
            Some(p) => evaluate_policy(p, &self.template, level, scale, episodes, self.max_steps, seed),
            None => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{scripted_expert, ExpertConfig, TaskKind};

    struct Counter(usize);

    impl DemoSource for Counter {
        fn generate(&mut self, level: u8, _: f64, count: usize, _: u64) -> (Vec<Demonstration>, GenerationStats) {
            let base = human();
            let out = (0..count)
                .map(|_| {
                    self.0 += 1;
                    Demonstration { id: format!("L{level}-{}", self.0), ..base.clone() }
                })
                .collect();
            (out, GenerationStats { attempts: count, successes: count })
        }
    }

    struct Fixed(f64);

    impl Trainer for Fixed {
        fn fit(&mut self, _: &[Demonstration]) -> Result<(), CurriculumError> {
            Ok(())
        }
        fn success_rate(&self, _: u8, _: f64, _: usize, _: u64) -> f64 {
            self.0
        }
    }

    fn human() -> Demonstration {
        let w = World::new(TaskSpec::new(TaskKind::Rotate, 1));
        scripted_expert(&w, &w.reset(0), 0, &ExpertConfig::default()).unwrap()
    }

    fn small() -> CurriculumConfig {
        CurriculumConfig { demos_per_generation: 3, ..CurriculumConfig::default() }
    }

    #[test]
    fn always_passing_advances_five_times() {
        let s = run(&mut Fixed(1.0), &mut Counter(0), vec![human()], &small(), 1, &mut |_| {}).unwrap();
        assert_eq!(s.history.len(), 5);
        assert_eq!(s.level, 5);
        assert_eq!(s.dataset.len(), 1 + 4 * 3);
    }

    #[test]
    fn always_failing_uses_the_fail_safe() {
        let cfg = small();
        let s = run(&mut Fixed(0.0), &mut Counter(0), vec![human()], &cfg, 1, &mut |_| {}).unwrap();
        assert_eq!(s.history.len(), 5 * (cfg.n_max as usize + 1));
        assert_eq!(s.level, 5);
    }

    #[test]
    fn failing_check_grows_the_dataset() {
        let cfg = small();
        let mut st = CurriculumState::new(vec![human()], &cfg);
        st.level = 1;
        st.n_fail = cfg.n_max - 1;
        let report = EvalReport { r_succ: 0.1, per_level: BTreeMap::new(), g_rate: 1.0 };
        let st = advance(st, &report, &cfg, &mut Counter(0), 0);
        assert_eq!((st.level, st.n_fail, st.dataset.len()), (1, cfg.n_max, 3));
        let report = EvalReport { r_succ: 0.2, ..report };
        let st = advance(st, &report, &cfg, &mut Counter(10), 0);
        assert_eq!((st.level, st.n_fail, st.dataset.len()), (2, 0, 3));
    }

    #[test]
    fn no_curriculum_pins_level_and_grows_scale() {
        let cfg = CurriculumConfig { criterion: Criterion::DataRateNoCurriculum, max_cycles: 7, ..small() };
        let s = run(&mut Fixed(0.0), &mut Counter(0), vec![human()], &cfg, 1, &mut |_| {}).unwrap();
        assert!(s.history.iter().all(|r| r.level == 4));
        assert!((s.scale - 1.4).abs() < 1e-9);
    }
}

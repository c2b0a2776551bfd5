use demoaug_core::augment::GenerationStats;
use demoaug_core::curriculum::{run, Criterion, CurriculumConfig, CurriculumError, DemoSource, Trainer, MAX_LEVEL};
use demoaug_core::demo::Demonstration;
use demoaug_core::sim::{scripted_expert, ExpertConfig, TaskKind, TaskSpec, World};
use proptest::prelude::*;
use std::sync::OnceLock;

fn human() -> &'static Demonstration {
    static H: OnceLock<Demonstration> = OnceLock::new();
    H.get_or_init(|| {
        let w = World::new(TaskSpec::new(TaskKind::PickPlace, 1));
        scripted_expert(&w, &w.reset(0), 0, &ExpertConfig::default()).unwrap()
    })
}

/// Emits uniquely named copies; `keep` of every `count` attempts survive.
struct Source {
    next: usize,
    keep: Vec<usize>,
    calls: usize,
}

impl DemoSource for Source {
    fn generate(&mut self, level: u8, _: f64, count: usize, _: u64) -> (Vec<Demonstration>, GenerationStats) {
        let keep = self.keep[self.calls % self.keep.len()].min(count);
        self.calls += 1;
        let out = (0..keep)
            .map(|_| {
                self.next += 1;
                Demonstration { id: format!("gen-{level}-{}", self.next), ..human().clone() }
            })
            .collect();
        (out, GenerationStats { attempts: count, successes: keep })
    }
}

/// Reports success rates from a script, cycling when it runs out.
struct Scripted {
    rates: Vec<f64>,
    fits: usize,
}

impl Trainer for Scripted {
    fn fit(&mut self, _: &[Demonstration]) -> Result<(), CurriculumError> {
        self.fits += 1;
        Ok(())
    }
    fn success_rate(&self, _: u8, _: f64, _: usize, _: u64) -> f64 {
        self.rates[(self.fits - 1) % self.rates.len()]
    }
}

fn criterion() -> impl Strategy<Value = Criterion> {
    prop::sample::select(vec![Criterion::TaskSuccess, Criterion::DataRate])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn loop_invariants_hold(
        rates in prop::collection::vec(0.0f64..0.4, 1..12),
        keep in prop::collection::vec(0usize..5, 1..6),
        n_max in 1u32..6,
        crit in criterion(),
    ) {
        let cfg = CurriculumConfig { n_max, demos_per_generation: 4, criterion: crit, ..CurriculumConfig::default() };
        let mut trainer = Scripted { rates, fits: 0 };
        let mut source = Source { next: 0, keep, calls: 0 };
        let s = run(&mut trainer, &mut source, vec![human().clone()], &cfg, 9, &mut |_| {}).unwrap();

        prop_assert_eq!(s.level, MAX_LEVEL + 1);
        prop_assert!(s.history.len() <= 5 * n_max as usize + 5);
        let (mut level, mut size) = (0u8, 0usize);
        for r in &s.history {
            prop_assert!(r.level >= level);
            prop_assert!(r.level <= level + 1);
            if r.level > level {
                prop_assert_eq!(r.n_fail, 0);
            } else {
                prop_assert!(r.n_fail >= 1 && r.n_fail <= n_max);
            }
            prop_assert!(r.dataset_size >= size);
            level = r.level;
            size = r.dataset_size;
        }
        prop_assert_eq!(s.dataset.len(), size);
    }

    #[test]
    fn scale_grows_without_a_curriculum(rates in prop::collection::vec(0.0f64..1.0, 1..6), n_max in 1u32..4) {
        let cfg = CurriculumConfig {
            n_max,
            demos_per_generation: 2,
            criterion: Criterion::DataRateNoCurriculum,
            max_cycles: 80,
            ..CurriculumConfig::default()
        };
        let mut trainer = Scripted { rates, fits: 0 };
        let mut source = Source { next: 0, keep: vec![1, 2], calls: 0 };
        let s = run(&mut trainer, &mut source, vec![human().clone()], &cfg, 2, &mut |_| {}).unwrap();
        prop_assert_eq!(s.history.len(), 80);
        let mut prev = 0.0;
        for r in &s.history {
            prop_assert_eq!(r.level, MAX_LEVEL);
            prop_assert!(r.scale >= prev && r.scale <= cfg.scale);
            prev = r.scale;
        }
        prop_assert!((prev - cfg.scale).abs() < 1e-9);
    }
}

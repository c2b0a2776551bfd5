use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use demoaug_core::augment::{
    aggregate_small_motions, estimate_sensitivity, generate_level_batch, interpolation_baseline, naive_relocate,
    randomize_camera, randomize_light_texture, retarget_to, sample_start, start_deltas, swap_object_resample,
    AugmentConfig, AugmentError, GenerationStats, Relocation, SeedDemo,
};
use demoaug_core::curriculum::{self, evaluate_policy, AugmentSource, CurriculumConfig, NnTrainer};
use demoaug_core::demo::{self, Demonstration};
use demoaug_core::learner::{load_policy, save_policy, LearnerConfig, NnLearner};
use demoaug_core::seed;
use demoaug_core::sim::{scripted_expert, ExpertConfig, Geometry, LevelRanges, TaskSpec, World};
use demoaug_teleop::{Session, SessionConfig, TickMode};

use crate::manifest::{list_outputs, version, RunManifest, Timings};
use crate::{
    AugmentArgs, CliError, Command, EvalArgs, InspectArgs, OpArg, RecordArgs, RenderArgs, RerunArgs, SensitivityArgs,
    TrainArgs,
};

pub(crate) struct Ctx {
    pub args: Vec<String>,
    /// Set by `rerun`: the configuration the original run used.
    pub expected_config: Option<serde_json::Value>,
}

impl Ctx {
    fn check_config(&self, config: &serde_json::Value) -> Result<(), CliError> {
        match &self.expected_config {
            Some(v) if v != config => {
                Err(CliError::Config("configuration differs from the manifest's snapshot".into()))
            }
            _ => Ok(()),
        }
    }
}

struct Clock {
    started: Instant,
    unix_ms: u128,
}

impl Clock {
    fn start() -> Clock {
        let unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis());
        Clock { started: Instant::now(), unix_ms }
    }

    fn timings(&self) -> Timings {
        Timings { started_unix_ms: self.unix_ms, elapsed_ms: self.started.elapsed().as_millis() }
    }
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) -> Result<(), CliError> {
    writeln!(out, "{}", text.as_ref()).and_then(|_| out.flush()).map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config serializes")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn parse_geometry(s: &str) -> Result<Geometry, CliError> {
    Geometry::parse(s).map_err(CliError::Usage)
}

fn read_json<T: for<'de> Deserialize<'de> + Default>(path: Option<&PathBuf>) -> Result<T, CliError> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn load_inputs(path: &Path) -> Result<Vec<Demonstration>, CliError> {
    let demos = if path.is_dir() { demo::load_dir(path)? } else { vec![demo::load_lazy(path)?] };
    if demos.is_empty() {
        return Err(CliError::Usage(format!("no demos in {}", path.display())));
    }
    Ok(demos)
}

fn write_manifest(
    dir: &Path,
    command: &str,
    ctx: &Ctx,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<String>,
    clock: &Clock,
) -> Result<(), CliError> {
    RunManifest {
        command: command.into(),
        args: ctx.args.clone(),
        config,
        seed,
        inputs,
        outputs: list_outputs(dir)?,
        version: version(),
        timings: clock.timings(),
    }
    .write(dir)
}

pub(crate) fn dispatch(cmd: Command, ctx: &Ctx, out: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        Command::Record(a) => record(a, ctx, out),
        Command::Augment(a) => augment_cmd(a, ctx, out),
        Command::Sensitivity(a) => sensitivity(a, out),
        Command::Train(a) => train(a, ctx, out),
        Command::Eval(a) => eval(a, out),
        Command::Render(a) => render_cmd(a, out),
        Command::Inspect(a) => inspect(a, out),
        Command::Rerun(a) => rerun(a, out),
    }
}

fn record(a: RecordArgs, ctx: &Ctx, out: &mut dyn Write) -> Result<(), CliError> {
    let clock = Clock::start();
    let mut task = TaskSpec::new(a.task, a.level);
    if let Some(o) = &a.object {
        task = task.with_object(parse_geometry(o)?);
    }
    create_dir(&a.out)?;
    if let Some(addr) = &a.serve {
        return serve(addr, task, &a, ctx, &clock, out);
    }
    if !a.expert {
        return Err(CliError::Usage("record needs --expert or --serve ADDR".into()));
    }
    let expert = ExpertConfig::default();
    let config = serde_json::json!({ "task": task, "expert": expert });
    ctx.check_config(&config)?;
    let world = World::new(task);
    let demos: Vec<Demonstration> = (0..a.count)
        .into_par_iter()
        .map(|i| {
            let s = seed::derive_indexed(a.seed, "record", i);
            scripted_expert(&world, &world.reset(s), s, &expert)
        })
        .collect::<Result<_, _>>()?;
    let paths: Vec<PathBuf> = demos.iter().map(|d| a.out.join(format!("{}.json", d.id))).collect();
    demos.par_iter().zip(&paths).try_for_each(|(d, p)| demo::save(d, p))?;
    for p in &paths {
        say(out, p.display().to_string())?;
    }
    write_manifest(&a.out, "record", ctx, config, Some(a.seed), Vec::new(), &clock)
}

fn serve(
    addr: &str,
    task: TaskSpec,
    a: &RecordArgs,
    ctx: &Ctx,
    clock: &Clock,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::io(Path::new("<runtime>"), e))?;
    let mode = if a.lockstep { TickMode::Lockstep } else { TickMode::default() };
    let cfg = SessionConfig { out_dir: Some(a.out.clone()), ..SessionConfig::new(task, a.seed) };
    let config = serde_json::json!({ "task": task, "lockstep": a.lockstep });
    let session = rt.block_on(async {
        let listener = demoaug_teleop::bind(addr).await?;
        let local = listener.local_addr().map_err(demoaug_teleop::TeleopError::from)?;
        say(out, format!("listening on {local}"))?;
        let shutdown = async {
            tokio::signal::ctrl_c().await.ok();
        };
        Ok::<Session, CliError>(demoaug_teleop::serve(listener, Session::new(cfg), mode, shutdown).await?)
    })?;
    for d in &session.saved {
        say(out, format!("saved {}", d.id))?;
    }
    write_manifest(&a.out, "record", ctx, config, Some(a.seed), Vec::new(), clock)
}

fn failure_kind(e: &AugmentError) -> &'static str {
    match e {
        AugmentError::ReplayFailed(_) => "replay_failed",
        AugmentError::ExhaustedAttempts { .. } => "exhausted_attempts",
        AugmentError::UnreachablePose => "unreachable_pose",
        AugmentError::NoGraspEvent => "no_grasp_event",
        AugmentError::RetargetReplayFailed(_) => "retarget_replay_failed",
        AugmentError::Invalid(_) => "invalid",
        AugmentError::Demo(_) => "demo",
    }
}

fn op_name(op: OpArg) -> &'static str {
    match op {
        OpArg::Camera => "camera",
        OpArg::Light => "light",
        OpArg::Objects => "objects",
        OpArg::Relocate => "relocate",
        OpArg::Interp => "interp",
        OpArg::Retarget => "retarget",
        OpArg::Aggregate => "aggregate",
        OpArg::LevelBatch => "level-batch",
    }
}

fn relocation_for(demo: &Demonstration, level: u8, cfg: &AugmentConfig, s: u64) -> Result<Relocation, AugmentError> {
    let ranges = LevelRanges::defaults(demo.task.kind, level);
    let start = sample_start(demo, &ranges, cfg.pose_scale, s)?;
    Ok(Relocation { object: start.objects[0].pose, target: start.target().map(|t| t.pose) })
}

fn augment_cmd(a: AugmentArgs, ctx: &Ctx, out: &mut dyn Write) -> Result<(), CliError> {
    let clock = Clock::start();
    let cfg: AugmentConfig = read_json(a.config.as_ref())?;
    cfg.validate()?;
    let object = a.object.as_deref().map(parse_geometry).transpose()?;
    if a.op == OpArg::Objects && object.is_none() {
        return Err(CliError::Usage("--op objects needs --object".into()));
    }
    let config = serde_json::json!({ "augment": cfg, "level": a.level, "count": a.count, "object": object });
    ctx.check_config(&config)?;
    let inputs = load_inputs(&a.input)?;
    create_dir(&a.out)?;
    let name = op_name(a.op);

    let needs_profile = matches!(a.op, OpArg::Retarget | OpArg::LevelBatch);
    let seeds: Vec<SeedDemo> = if needs_profile {
        inputs.par_iter().map(|d| SeedDemo::prepare(d.clone(), &cfg, a.seed)).collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };

    let mut failures: BTreeMap<&'static str, usize> = BTreeMap::new();
    let (demos, stats) = if a.op == OpArg::LevelBatch {
        generate_level_batch(&seeds, a.level, a.count, &cfg, a.seed)
    } else {
        let per_demo = if a.op == OpArg::Aggregate { 1 } else { a.count };
        let jobs: Vec<(usize, usize)> = (0..inputs.len()).flat_map(|i| (0..per_demo).map(move |k| (i, k))).collect();
        let results: Vec<Result<Demonstration, AugmentError>> = jobs
            .par_iter()
            .map(|&(i, k)| {
                let d = &inputs[i];
                let s = seed::derive_indexed(seed::derive_seed(a.seed, &d.id), name, k);
                match a.op {
                    OpArg::Camera => randomize_camera(d, &cfg, s),
                    OpArg::Light => randomize_light_texture(d, &cfg, s),
                    OpArg::Objects => swap_object_resample(d, object.expect("checked above"), &cfg, s),
                    OpArg::Relocate => naive_relocate(d, &relocation_for(d, a.level, &cfg, s)?),
                    OpArg::Interp => interpolation_baseline(d, &relocation_for(d, a.level, &cfg, s)?),
                    OpArg::Retarget => {
                        let ranges = LevelRanges::defaults(d.task.kind, a.level);
                        let start = sample_start(d, &ranges, cfg.pose_scale, s)?;
                        let (delta, target_delta) = start_deltas(&d.start_state()?, &start);
                        retarget_to(d, &seeds[i].profile, &start, &delta, target_delta.as_ref(), s)
                    }
                    OpArg::Aggregate => aggregate_small_motions(d, cfg.ee_epsilon, cfg.finger_epsilon),
                    OpArg::LevelBatch => unreachable!("handled above"),
                }
            })
            .collect();
        let stats =
            GenerationStats { attempts: results.len(), successes: results.iter().filter(|r| r.is_ok()).count() };
        let mut demos = Vec::new();
        for r in results {
            match r {
                Ok(d) => demos.push(d),
                Err(e) => *failures.entry(failure_kind(&e)).or_default() += 1,
            }
        }
        (demos, stats)
    };
    demos.par_iter().try_for_each(|d| demo::save(d, &a.out.join(format!("{}.json", d.id))))?;
    let summary = serde_json::json!({
        "op": name,
        "attempts": stats.attempts,
        "successes": stats.successes,
        "rate": stats.rate(),
        "failures": failures,
    });
    say(out, summary.to_string())?;
    let inputs_list = vec![a.input.display().to_string()];
    write_manifest(&a.out, "augment", ctx, config, Some(a.seed), inputs_list, &clock)
}

fn sensitivity(a: SensitivityArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg: AugmentConfig = read_json(a.config.as_ref())?;
    cfg.validate()?;
    let d = demo::load_lazy(&a.input)?;
    let m = a.segments.unwrap_or(cfg.segments);
    let p = estimate_sensitivity(&d, &d.world(), m, &cfg, a.seed)?;
    say(
        out,
        format!("{:>7} {:>6} {:>6} {:>9} {:>8} {:>7}", "segment", "start", "steps", "max_delta", "psi", "weight"),
    )?;
    for j in 0..p.segments() {
        let (start, _) = p.bounds(j);
        say(
            out,
            format!(
                "{:>7} {:>6} {:>6} {:>9.2} {:>8.4} {:>7.4}",
                j, start, p.steps[j], p.max_delta[j], p.psi[j], p.weights[j]
            ),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub curriculum: CurriculumConfig,
    pub augment: AugmentConfig,
    pub learner: LearnerConfig,
}

fn train(a: TrainArgs, ctx: &Ctx, out: &mut dyn Write) -> Result<(), CliError> {
    let clock = Clock::start();
    let cfg: TrainConfig = read_json(a.config.as_ref())?;
    cfg.curriculum.validate()?;
    cfg.augment.validate()?;
    let config = to_value(&cfg);
    ctx.check_config(&config)?;
    let human = load_inputs(&a.demos)?;
    let kind = human[0].task.kind;
    if human.iter().any(|d| d.task.kind != kind) {
        return Err(CliError::Usage("all training demos must share one task".into()));
    }
    create_dir(&a.out)?;

    let base = &human[0];
    let template = World::with_config(TaskSpec::new(kind, 1).with_object(base.task.object), base.world().config);
    let mut trainer = NnTrainer::new(NnLearner::new(cfg.learner), template, cfg.curriculum.max_steps);
    let mut source = AugmentSource::new(&human, cfg.augment.clone(), a.seed)?;
    let log_path = a.out.join("cycles.jsonl");
    let mut log = String::new();
    let mut lines: Vec<String> = Vec::new();
    let state = curriculum::run(&mut trainer, &mut source, human, &cfg.curriculum, a.seed, &mut |r| {
        let line = serde_json::to_string(r).expect("record serializes");
        log.push_str(&line);
        log.push('\n');
        lines.push(line);
    })?;
    for line in &lines {
        say(out, line)?;
    }
    std::fs::write(&log_path, log).map_err(|e| CliError::io(&log_path, e))?;
    let policy = trainer.policy.as_ref().ok_or_else(|| CliError::Config("max_cycles is 0; nothing trained".into()))?;
    save_policy(policy, &a.out)?;
    let outcome = if state.level > curriculum::MAX_LEVEL {
        "passed every level".to_string()
    } else {
        format!("stopped at level {}", state.level)
    };
    say(out, format!("{outcome} after {} cycles with {} demos", state.cycle, state.dataset.len()))?;
    write_manifest(&a.out, "train", ctx, config, Some(a.seed), vec![a.demos.display().to_string()], &clock)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let policy = load_policy(&a.policy)?;
    let mut task = TaskSpec::new(a.task, 1);
    if let Some(o) = &a.object {
        task = task.with_object(parse_geometry(o)?);
    }
    let template = World::new(task);
    let levels: Vec<u8> = if a.all_levels { (1..=4).collect() } else { vec![a.level] };
    let rates: Vec<f64> = levels
        .iter()
        .map(|&l| {
            let s = seed::derive_indexed(a.seed, "eval", l as usize);
            evaluate_policy(&policy, &template, l, 10.0, a.episodes, a.max_steps, s)
        })
        .collect();
    if a.all_levels {
        say(out, "| Level 1 | Level 2 | Level 3 | Level 4 |")?;
        let cells: Vec<String> = rates.iter().map(|r| format!("{:>6.0}%", 100.0 * r)).collect();
        say(out, format!("| {} |", cells.join(" | ")))?;
    } else {
        say(out, format!("level {} success {:.3} over {} episodes", a.level, rates[0], a.episodes))?;
    }
    Ok(())
}

fn render_cmd(a: RenderArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let d = demo::load(&a.demo)?;
    let img = d.image(a.frame)?;
    let file = std::fs::File::create(&a.png).map_err(|e| CliError::io(&a.png, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), img.width, img.height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let to_err = |e: png::EncodingError| CliError::Config(format!("png: {e}"));
    enc.write_header().map_err(to_err)?.write_image_data(&img.data).map_err(to_err)?;
    say(out, a.png.display().to_string())
}

fn inspect(a: InspectArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let d = demo::load_lazy(&a.demo)?;
    say(out, format!("id          {}", d.id))?;
    say(out, format!("task        {} (level {})", d.task.kind, d.task.level))?;
    say(out, format!("object      {:?}", d.task.object))?;
    say(out, format!("frames      {} ({:.2} s at 30 Hz)", d.len(), d.len() as f64 / demo::CONTROL_HZ))?;
    say(out, format!("fingers     {}", d.finger_dim()))?;
    say(out, format!("provenance  {}", serde_json::to_string(&d.provenance).expect("provenance serializes")))?;
    let success = demo::replay(&d, &d.world())?.success;
    say(out, format!("replays     {}", if success { "successfully" } else { "without success" }))?;

    let dir = a.demo.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    let mut known: BTreeMap<String, demo::Provenance> = BTreeMap::new();
    known.insert(d.id.clone(), d.provenance.clone());
    for dir in ancestor_dirs(dir, &a.search) {
        for x in demo::load_dir(&dir)? {
            known.entry(x.id).or_insert(x.provenance);
        }
    }
    let chain = match demo::provenance_chain(&d.id, &known) {
        Ok(c) => c.join(" <- "),
        Err(e) => format!("incomplete: {e}"),
    };
    say(out, format!("chain       {chain}"))
}

/// `dir`, `extra`, and every input directory reachable through manifests.
fn ancestor_dirs(dir: PathBuf, extra: &[PathBuf]) -> Vec<PathBuf> {
    let mut seen: Vec<PathBuf> = Vec::new();
    let mut todo: Vec<PathBuf> = extra.iter().rev().cloned().collect();
    todo.push(dir);
    while let Some(d) = todo.pop() {
        let d = if d.is_file() { d.parent().map(Path::to_path_buf).unwrap_or_default() } else { d };
        if !d.is_dir() || seen.contains(&d) {
            continue;
        }
        if let Ok(m) = RunManifest::read(&d.join(crate::manifest::MANIFEST)) {
            todo.extend(m.inputs.iter().map(PathBuf::from));
        }
        seen.push(d);
    }
    seen
}

fn replace_out(args: &[String], new_out: &Path) -> Result<Vec<String>, CliError> {
    let mut out = Vec::with_capacity(args.len());
    let mut replaced = false;
    let mut iter = args.iter();
    while let Some(a) = iter.next() {
        if a == "--out" {
            iter.next();
            out.push(a.clone());
            out.push(new_out.display().to_string());
            replaced = true;
        } else if a.starts_with("--out=") {
            out.push(format!("--out={}", new_out.display()));
            replaced = true;
        } else {
            out.push(a.clone());
        }
    }
    if replaced {
        Ok(out)
    } else {
        Err(CliError::Config("manifest has no --out argument".into()))
    }
}

fn rerun(a: RerunArgs, out: &mut dyn Write) -> Result<(), CliError> {
    use clap::Parser;
    let m = RunManifest::read(&a.manifest)?;
    let args = replace_out(&m.args, &a.out)?;
    let argv = std::iter::once("demoaug".to_string()).chain(args.iter().cloned());
    let cli = crate::Cli::try_parse_from(argv).map_err(|e| CliError::Config(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(CliError::Config("a manifest cannot describe a rerun".into()));
    }
    let ctx = Ctx { args, expected_config: Some(m.config) };
    dispatch(cli.command, &ctx, out)
}

//! `demoaug` command line: record, augment, train and evaluate.

mod commands;
pub mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

use demoaug_core::sim::TaskKind;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Demo(#[from] demoaug_core::demo::DemoError),
    #[error(transparent)]
    Augment(#[from] demoaug_core::augment::AugmentError),
    #[error(transparent)]
    Curriculum(#[from] demoaug_core::curriculum::CurriculumError),
    #[error(transparent)]
    Learn(#[from] demoaug_core::learner::LearnError),
    #[error(transparent)]
    Sim(#[from] demoaug_core::sim::SimError),
    #[error(transparent)]
    Teleop(#[from] demoaug_teleop::TeleopError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> CliError {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Demo(_) => "demo",
            CliError::Augment(_) => "augment",
            CliError::Curriculum(_) => "curriculum",
            CliError::Learn(_) => "learn",
            CliError::Sim(_) => "sim",
            CliError::Teleop(_) => "teleop",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// `{"error": code, "detail": message}`
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.code(), "detail": self.to_string() }).to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "demoaug", version, about = "Demonstration augmentation for dexterous manipulation")]
pub struct Cli {
    /// Worker threads for batch augmentation and evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record demos with the scripted expert or a teleoperation server.
    Record(RecordArgs),
    /// Apply one augmentation operator to a directory of demos.
    Augment(AugmentArgs),
    /// Print a demo's per-segment sensitivity profile.
    Sensitivity(SensitivityArgs),
    /// Run the curriculum and save the final policy.
    Train(TrainArgs),
    /// Measure a saved policy's success rate.
    Eval(EvalArgs),
    /// Export one frame of a demo as PNG.
    Render(RenderArgs),
    /// Print a demo's metadata and provenance chain.
    Inspect(InspectArgs),
    /// Repeat the run described by a manifest into a new directory.
    Rerun(RerunArgs),
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: TaskKind,
    #[arg(long, default_value_t = 1)]
    pub level: u8,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scripted demos.
    #[arg(short = 'n', long = "count", default_value_t = 1)]
    pub count: usize,
    #[arg(long, conflicts_with = "serve")]
    pub expert: bool,
    /// Serve a teleoperation session on this address until interrupted.
    #[arg(long, value_name = "ADDR")]
    pub serve: Option<String>,
    /// Tick once per received message instead of at 30 Hz.
    #[arg(long, requires = "serve")]
    pub lockstep: bool,
    /// Manipulated object: box, cylinder, bottle, tri-valve, tetra-valve,
    /// penta-valve or valveN.
    #[arg(long)]
    pub object: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OpArg {
    Camera,
    Light,
    Objects,
    Relocate,
    Interp,
    Retarget,
    Aggregate,
    LevelBatch,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long, value_enum)]
    pub op: OpArg,
    /// JSON augmentation config; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Demo file or directory of demos.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Level whose pose ranges are sampled (relocate, interp, retarget,
    /// level-batch).
    #[arg(long, default_value_t = 3)]
    pub level: u8,
    /// Attempts per input demo; total attempts for level-batch.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Replacement object for `objects`.
    #[arg(long)]
    pub object: Option<String>,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON with optional `curriculum`, `augment` and `learner` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of human (or scripted) demos.
    #[arg(long)]
    pub demos: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory holding policy.json and policy.bin.
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, value_parser = parse_task)]
    pub task: TaskKind,
    #[arg(long, default_value_t = 1)]
    pub level: u8,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluate levels 1..=4 and print one row.
    #[arg(long)]
    pub all_levels: bool,
    #[arg(long, default_value_t = 800)]
    pub max_steps: usize,
    #[arg(long)]
    pub object: Option<String>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub demo: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long)]
    pub png: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub demo: PathBuf,
    /// Extra directories searched for ancestors. The demo's directory and
    /// the inputs listed in its manifest are always searched.
    #[arg(long)]
    pub search: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (including the program name) and runs the command. Normal
/// output goes to `out`.
pub fn run<I, T>(argv: I, out: &mut (dyn Write + Send)) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            write!(out, "{e}").map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let ctx = commands::Ctx { args, expected_config: None };
    pool.install(|| commands::dispatch(cli.command, &ctx, out))
}

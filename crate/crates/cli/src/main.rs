//! `cwm`: synthesize, evaluate and plan with code world models.

mod run;
mod setup;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cwm_core::search::Ablation;

use setup::{BackendSpec, WorkerSpec};

#[derive(Parser, Debug)]
#[command(
    name = "cwm",
    version,
    about = "Code world model synthesis and planning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Search for a program modelling an environment (or solving a problem).
    Synthesize(SynthArgs),
    /// Score a program on an environment's transition buffer.
    Evaluate(EvalArgs),
    /// Plan in the real environment with a program as the model.
    Plan(PlanArgs),
    /// Synthesize solutions to stdin/stdout problems.
    AppsEval(SynthArgs),
    /// Collect run manifests into a results table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    #[value(name = "gif-mcts")]
    GifMcts,
    #[value(name = "worldcoder")]
    WorldCoder,
    #[value(name = "zero-shot-cot")]
    ZeroShot,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::GifMcts => cwm_core::search::METHOD,
            Method::WorldCoder => cwm_core::baselines::WORLDCODER,
            Method::ZeroShot => cwm_core::baselines::ZERO_SHOT,
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Root directory for run outputs.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    /// Execution backend: native or command:<program> [args].
    #[arg(long, default_value = "native")]
    pub worker: WorkerSpec,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Environment directory; may be repeated.
    #[arg(long)]
    pub env: Vec<PathBuf>,
    /// Problem directory; may be repeated.
    #[arg(long)]
    pub problem: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "gif-mcts")]
    pub method: Method,
    /// LLM calls per task (attempts for zero-shot-cot).
    #[arg(long, default_value_t = 50)]
    pub budget: usize,
    /// http:<url>#<model> or mock:<script>.
    #[arg(long)]
    pub backend: BackendSpec,
    #[arg(long)]
    pub ablation: Vec<Ablation>,
    /// Tasks run concurrently, each with its own worker and gateway.
    #[arg(long, visible_alias = "parallel", default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct ProgramSource {
    /// Program file to load.
    #[arg(long, conflicts_with = "run")]
    pub program: Option<PathBuf>,
    /// Run directory whose program.txt to load.
    #[arg(long)]
    pub run: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[command(flatten)]
    pub source: ProgramSource,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Args, Debug, Clone)]
pub struct PlanArgs {
    #[arg(long)]
    pub env: PathBuf,
    #[command(flatten)]
    pub source: ProgramSource,
    #[arg(long, default_value_t = 10)]
    pub episodes: usize,
    #[arg(long, default_value_t = 100)]
    pub max_steps: usize,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Directory holding run directories.
    #[arg(long, default_value = "runs")]
    pub runs: PathBuf,
    /// Where to write results.{json,csv,txt}; defaults to the runs directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    pub format: Format,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synthesize(a) => run::synthesize(&a, false),
        Command::AppsEval(a) => run::synthesize(&a, true),
        Command::Evaluate(a) => run::evaluate(&a),
        Command::Plan(a) => run::plan(&a),
        Command::Report(a) => run::report(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<run::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

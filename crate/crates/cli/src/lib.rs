//! Command line for the question, Tetris and avoidance benchmarks.
//!
//! Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or
//! configuration error, 3 backend error.

pub mod config;
pub mod persist;
pub mod run;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use apex_bench::avoid::Difficulty;
use apex_bench::physqa::{Problem, TaskType};
use apex_core::decision::BackendKind;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use config::{read_config_file, resolve, RunConfig};
use persist::persist_results;
use run::RunOutcome;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(apex_core::Error),
}

impl From<apex_core::Error> for CliError {
    fn from(e: apex_core::Error) -> Self {
        match e {
            apex_core::Error::Backend(_) | apex_core::Error::BackendConfig(_) => CliError::Backend(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Io(_) | CliError::Core(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "apex", version, about = "Physics-aware planning benchmarks", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Kinematics question answering.
    Physqa {
        #[command(subcommand)]
        cmd: PhysqaCmd,
    },
    /// Tetris placement episodes.
    Tetris {
        #[command(subcommand)]
        cmd: TetrisCmd,
    },
    /// Moving-obstacle avoidance episodes.
    Avoid {
        #[command(subcommand)]
        cmd: AvoidCmd,
    },
    /// Parameter sweeps.
    Ablate {
        #[command(subcommand)]
        cmd: AblateCmd,
    },
}

#[derive(Debug, Subcommand)]
pub enum PhysqaCmd {
    /// Write problems (and optionally answer keys) as JSON lines.
    Gen(GenArgs),
    /// Answer and grade generated problems.
    Run(PhysqaRunArgs),
    /// Grade stored replies against the analytic keys.
    Grade(GradeArgs),
    /// Sweep the integration step.
    Ablate(DtArgs),
}

#[derive(Debug, Subcommand)]
pub enum TetrisCmd {
    Run(TetrisArgs),
}

#[derive(Debug, Subcommand)]
pub enum AvoidCmd {
    Run(AvoidArgs),
}

#[derive(Debug, Subcommand)]
pub enum AblateCmd {
    /// Sweep the salience budget on the avoidance task.
    Topk(TopkArgs),
    /// Sweep the integration step on the question suite.
    Dt(DtArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Results file. Printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = ["jsonl", "csv"])]
    pub format: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    /// engine (questions only), scripted, first_safe, fixed or remote.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Per-request timeout, s.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub retries: Option<u32>,
    /// Reply text for the fixed backend.
    #[arg(long)]
    pub response: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ProblemArgs {
    /// Task families, or `all`.
    #[arg(long = "type", num_args = 1..)]
    pub types: Vec<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, num_args = 1..)]
    pub seed: Vec<u64>,
    #[arg(long)]
    pub gravity: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub problems: ProblemArgs,
    /// Answer keys file.
    #[arg(long)]
    pub keys: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PhysqaRunArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub problems: ProblemArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub dt: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct DtArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub problems: ProblemArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long, num_args = 1..)]
    pub dt: Vec<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct GradeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Problems file written by `physqa gen`.
    #[arg(long)]
    pub problems: PathBuf,
    /// One reply per line.
    #[arg(long)]
    pub answers: PathBuf,
    #[arg(long)]
    pub gravity: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct EpisodeArgs {
    /// Number of episodes per setting.
    #[arg(long)]
    pub seeds: Option<u64>,
    /// First seed.
    #[arg(long, default_value_t = 0)]
    pub seed_base: u64,
}

#[derive(Debug, Clone, Args)]
pub struct TetrisArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub episodes: EpisodeArgs,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub rows: Option<usize>,
    #[arg(long)]
    pub cols: Option<usize>,
    /// Directory for text board dumps.
    #[arg(long)]
    pub frames: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AvoidWorldArgs {
    /// simple, medium, hard, or `all`.
    #[arg(long, num_args = 1..)]
    pub difficulty: Vec<String>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub safe_threshold: Option<f64>,
    #[arg(long)]
    pub decision_interval: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Obstacles steer toward the agent.
    #[arg(long)]
    pub homing: bool,
    /// Directory for per-episode trajectory CSV files.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AvoidArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub episodes: EpisodeArgs,
    #[command(flatten)]
    pub world: AvoidWorldArgs,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TopkArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[command(flatten)]
    pub episodes: EpisodeArgs,
    #[command(flatten)]
    pub world: AvoidWorldArgs,
    #[arg(long, num_args = 1..)]
    pub k: Vec<usize>,
}

/// Builds nested override objects from dotted paths.
#[derive(Default)]
struct Overlay(Map<String, Value>);

impl Overlay {
    fn set(&mut self, path: &str, v: impl Into<Value>) {
        let mut parts: Vec<&str> = path.split('.').collect();
        let last = parts.pop().expect("non-empty path");
        let mut m = &mut self.0;
        for p in parts {
            m = m.entry(p).or_insert_with(|| Value::Object(Map::new())).as_object_mut().expect("section is an object");
        }
        m.insert(last.to_string(), v.into());
    }

    fn opt<T: Into<Value>>(&mut self, path: &str, v: Option<T>) {
        if let Some(v) = v {
            self.set(path, v);
        }
    }
}

fn tasks(names: &[String]) -> Result<Option<Vec<TaskType>>, CliError> {
    if names.is_empty() {
        return Ok(None);
    }
    if names.iter().any(|n| n == "all") {
        return Ok(Some(TaskType::ALL.to_vec()));
    }
    names
        .iter()
        .map(|n| TaskType::parse(n).ok_or_else(|| CliError::Config(format!("unknown task type `{n}`"))))
        .collect::<Result<_, _>>()
        .map(Some)
}

fn difficulties(names: &[String]) -> Result<Option<Vec<Difficulty>>, CliError> {
    if names.is_empty() {
        return Ok(None);
    }
    if names.iter().any(|n| n == "all") {
        return Ok(Some(Difficulty::ALL.to_vec()));
    }
    names
        .iter()
        .map(|n| Difficulty::parse(n).ok_or_else(|| CliError::Config(format!("unknown difficulty `{n}`"))))
        .collect::<Result<_, _>>()
        .map(Some)
}

/// Request parts shared by every run command.
struct Request {
    file: Option<Value>,
    overlay: Overlay,
    replace_backend: bool,
}

impl Request {
    fn new(benchmark: &str, common: &Common) -> Result<Self, CliError> {
        let file = common.config.as_deref().map(read_config_file).transpose()?;
        let mut overlay = Overlay::default();
        overlay.set("benchmark", benchmark);
        overlay.opt("out", common.out.as_ref().map(|p| p.display().to_string()));
        overlay.opt("format", common.format.clone());
        Ok(Self { file, overlay, replace_backend: false })
    }

    fn backend(&mut self, b: &BackendArgs, questions: bool) -> Result<(), CliError> {
        match b.backend.as_deref() {
            None => {}
            Some("engine") if questions => self.overlay.set("physqa.answerer", "engine"),
            Some(name) => {
                let kind = BackendKind::parse(name).ok_or_else(|| CliError::Config(format!("unknown backend `{name}`")))?;
                self.overlay.set("backend.kind", serde_json::to_value(kind).expect("kind serializes"));
                if questions {
                    self.overlay.set("physqa.answerer", "backend");
                }
                self.replace_backend = true;
            }
        }
        self.overlay.opt("backend.base_url", b.base_url.clone());
        self.overlay.opt("backend.model", b.model.clone());
        self.overlay.opt("backend.timeout_s", b.timeout);
        self.overlay.opt("backend.retries", b.retries);
        self.overlay.opt("backend.response", b.response.clone());
        Ok(())
    }

    fn problems(&mut self, p: &ProblemArgs) -> Result<(), CliError> {
        self.overlay.opt("physqa.tasks", tasks(&p.types)?.map(|t| json!(t)));
        self.overlay.opt("physqa.n", p.n);
        if !p.seed.is_empty() {
            self.overlay.set("seeds", json!(p.seed));
        }
        self.overlay.opt("sim.gravity", p.gravity);
        self.overlay.opt("physqa.tolerance", p.tolerance);
        Ok(())
    }

    fn episodes(&mut self, e: &EpisodeArgs) {
        if let Some(n) = e.seeds {
            self.overlay.set("seeds", json!((e.seed_base..e.seed_base + n).collect::<Vec<_>>()));
        }
    }

    fn world(&mut self, w: &AvoidWorldArgs) -> Result<(), CliError> {
        self.overlay.opt("avoid.difficulties", difficulties(&w.difficulty)?.map(|d| json!(d)));
        self.overlay.opt("sim.dt", w.dt);
        self.overlay.opt("avoid.safe_threshold", w.safe_threshold);
        self.overlay.opt("avoid.decision_interval", w.decision_interval);
        self.overlay.opt("avoid.horizon", w.horizon);
        if w.homing {
            self.overlay.set("avoid.homing", true);
        }
        self.overlay.opt("avoid.trajectories", w.trajectories.as_ref().map(|p| p.display().to_string()));
        Ok(())
    }

    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut file = self.file;
        if self.replace_backend {
            if let Some(Value::Object(m)) = file.as_mut() {
                m.remove("backend");
            }
        }
        resolve(file, Value::Object(self.overlay.0))
    }
}

fn emit(cfg: &RunConfig, outcome: RunOutcome) -> Result<(), CliError> {
    let env = &outcome.envelope;
    match &cfg.out {
        Some(path) => {
            persist_results(env, path, cfg.format)?;
            for row in &env.aggregates {
                println!("{}", row.to_json());
            }
        }
        None => print!("{}", env.render(cfg.format)),
    }
    if outcome.backend_errors > 0 {
        return Err(CliError::Backend(format!("{} backend failures; results were written", outcome.backend_errors)));
    }
    Ok(())
}

fn write_or_print(path: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_problems(path: &PathBuf) -> Result<Vec<Problem>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| CliError::Config(format!("{} line {}: {e}", path.display(), i + 1))))
        .collect()
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Physqa { cmd: PhysqaCmd::Gen(a) } => {
            let mut req = Request::new("physqa", &a.common)?;
            req.problems(&a.problems)?;
            let cfg = req.resolve()?;
            let (problems, keys) = run::generate(&cfg)?;
            write_or_print(cfg.out.as_ref(), &problems)?;
            if let Some(k) = &a.keys {
                write_or_print(Some(k), &keys)?;
            }
            Ok(())
        }
        Command::Physqa { cmd: PhysqaCmd::Run(a) } => {
            let mut req = Request::new("physqa", &a.common)?;
            req.problems(&a.problems)?;
            req.backend(&a.backend, true)?;
            req.overlay.opt("sim.dt", a.dt);
            let cfg = req.resolve()?;
            emit(&cfg, run::run_physqa(&cfg)?)
        }
        Command::Physqa { cmd: PhysqaCmd::Grade(a) } => {
            let mut req = Request::new("physqa", &a.common)?;
            req.overlay.opt("sim.gravity", a.gravity);
            req.overlay.opt("physqa.tolerance", a.tolerance);
            let cfg = req.resolve()?;
            let problems = read_problems(&a.problems)?;
            let answers = fs::read_to_string(&a.answers).map_err(|e| CliError::Config(format!("{}: {e}", a.answers.display())))?;
            emit(&cfg, run::grade_answers(&cfg, &problems, &answers)?)
        }
        Command::Physqa { cmd: PhysqaCmd::Ablate(a) } | Command::Ablate { cmd: AblateCmd::Dt(a) } => {
            let mut req = Request::new("physqa", &a.common)?;
            req.problems(&a.problems)?;
            req.backend(&a.backend, true)?;
            if !a.dt.is_empty() {
                req.overlay.set("physqa.dts", json!(a.dt));
            }
            let cfg = req.resolve()?;
            emit(&cfg, run::run_dt_ablation(&cfg)?)
        }
        Command::Tetris { cmd: TetrisCmd::Run(a) } => {
            let mut req = Request::new("tetris", &a.common)?;
            req.backend(&a.backend, false)?;
            req.episodes(&a.episodes);
            req.overlay.opt("tetris.blocks", a.blocks);
            req.overlay.opt("tetris.rows", a.rows);
            req.overlay.opt("tetris.cols", a.cols);
            req.overlay.opt("tetris.frames", a.frames.as_ref().map(|p| p.display().to_string()));
            let cfg = req.resolve()?;
            emit(&cfg, run::run_tetris(&cfg)?)
        }
        Command::Avoid { cmd: AvoidCmd::Run(a) } => {
            let mut req = Request::new("avoid", &a.common)?;
            req.backend(&a.backend, false)?;
            req.episodes(&a.episodes);
            req.world(&a.world)?;
            req.overlay.opt("salience.k", a.top_k);
            let cfg = req.resolve()?;
            emit(&cfg, run::run_avoid(&cfg)?)
        }
        Command::Ablate { cmd: AblateCmd::Topk(a) } => {
            let mut req = Request::new("avoid", &a.common)?;
            req.backend(&a.backend, false)?;
            req.episodes(&a.episodes);
            req.world(&a.world)?;
            if !a.k.is_empty() {
                req.overlay.set("avoid.top_ks", json!(a.k));
            }
            let cfg = req.resolve()?;
            emit(&cfg, run::run_topk_ablation(&cfg)?)
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

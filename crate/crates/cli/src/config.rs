//! Run configuration: JSON file, command-line overrides, defaults.

use std::fs;
use std::path::{Path, PathBuf};

use apex_bench::avoid::{AvoidConfig, Difficulty};
use apex_bench::physqa::{TaskType, DEFAULT_COUNT, DEFAULT_TOLERANCE};
use apex_bench::tetris::{TetrisCaps, DEFAULT_BLOCKS, DEFAULT_COLS, DEFAULT_ROWS};
use apex_core::decision::BackendConfig;
use apex_core::physics::SimConfig;
use apex_core::rollout::{DEFAULT_AGENT_SPEED, DEFAULT_SAFE_THRESHOLD};
use apex_core::salience::SalienceConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Default step for the avoidance world when none is configured.
pub const AVOID_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Benchmark {
    Physqa,
    Tetris,
    Avoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Jsonl,
    Csv,
}

/// Who answers physics questions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answerer {
    /// The simulator's own prediction is the answer.
    #[default]
    Engine,
    /// The configured decision backend answers, given the engine's prediction.
    Backend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysqaSettings {
    pub tasks: Vec<TaskType>,
    pub n: usize,
    pub tolerance: f64,
    pub answerer: Answerer,
    /// Steps swept by the dt ablation.
    pub dts: Vec<f64>,
}

impl Default for PhysqaSettings {
    fn default() -> Self {
        Self {
            tasks: TaskType::ALL.to_vec(),
            n: DEFAULT_COUNT,
            tolerance: DEFAULT_TOLERANCE,
            answerer: Answerer::Engine,
            dts: vec![0.001, 0.005, 0.01],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TetrisSettings {
    pub blocks: usize,
    pub rows: usize,
    pub cols: usize,
    /// Directory for per-seed board dumps.
    pub frames: Option<PathBuf>,
}

impl Default for TetrisSettings {
    fn default() -> Self {
        Self { blocks: DEFAULT_BLOCKS, rows: DEFAULT_ROWS, cols: DEFAULT_COLS, frames: None }
    }
}

impl TetrisSettings {
    pub fn caps(&self) -> TetrisCaps {
        TetrisCaps { blocks: self.blocks, rows: self.rows, cols: self.cols }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AvoidSettings {
    pub difficulties: Vec<Difficulty>,
    pub decision_interval: f64,
    pub horizon: f64,
    pub safe_threshold: f64,
    pub agent_speed: f64,
    pub homing: bool,
    /// Salience budgets swept by the top-k ablation.
    pub top_ks: Vec<usize>,
    /// Directory for per-episode trajectory CSV files.
    pub trajectories: Option<PathBuf>,
}

impl Default for AvoidSettings {
    fn default() -> Self {
        Self {
            difficulties: Difficulty::ALL.to_vec(),
            decision_interval: 1.0,
            horizon: 10.0,
            safe_threshold: DEFAULT_SAFE_THRESHOLD,
            agent_speed: DEFAULT_AGENT_SPEED,
            homing: false,
            top_ks: vec![1, 2, 4],
            trajectories: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: Benchmark,
    #[serde(default)]
    pub sim: SimConfig<f64>,
    #[serde(default)]
    pub salience: SalienceConfig<f64>,
    #[serde(default = "BackendConfig::scripted")]
    pub backend: BackendConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub physqa: PhysqaSettings,
    #[serde(default)]
    pub tetris: TetrisSettings,
    #[serde(default)]
    pub avoid: AvoidSettings,
}

impl RunConfig {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn avoid_config(&self) -> AvoidConfig {
        AvoidConfig {
            decision_interval: self.avoid.decision_interval,
            horizon: self.avoid.horizon,
            safe_threshold: self.avoid.safe_threshold,
            dt: self.sim.dt,
            salience: self.salience.clone(),
            agent_speed: self.avoid.agent_speed,
            homing: self.avoid.homing,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.salience.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.backend.validate()?;
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if let Some(out) = &self.out {
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            if !dir.is_dir() {
                return bad(format!("output directory {} does not exist", dir.display()));
            }
        }
        let p = &self.physqa;
        if p.tasks.is_empty() || p.n == 0 {
            return bad("physqa needs at least one task type and n >= 1".into());
        }
        if !(p.tolerance > 0.0) {
            return bad("physqa.tolerance must be > 0".into());
        }
        if p.dts.iter().any(|dt| !(*dt > 0.0 && dt.is_finite())) {
            return bad("physqa.dts must all be > 0".into());
        }
        let t = &self.tetris;
        if t.blocks == 0 || t.rows < 4 || t.cols < 4 {
            return bad("tetris needs blocks >= 1 and a board of at least 4x4".into());
        }
        let a = &self.avoid;
        if a.difficulties.is_empty() {
            return bad("avoid.difficulties must not be empty".into());
        }
        for (name, x) in [
            ("decision_interval", a.decision_interval),
            ("horizon", a.horizon),
            ("agent_speed", a.agent_speed),
        ] {
            if !(x > 0.0 && x.is_finite()) {
                return bad(format!("avoid.{name} must be > 0"));
            }
        }
        if !(a.safe_threshold >= 0.0) {
            return bad("avoid.safe_threshold must be >= 0".into());
        }
        if a.top_ks.contains(&0) {
            return bad("avoid.top_ks entries must be >= 1".into());
        }
        Ok(())
    }
}

/// Overlays `top` onto `base`, recursing into objects.
pub fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, t) => *b = t,
    }
}

pub fn read_config_file(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if !v.is_object() {
        return Err(CliError::Config(format!("{}: expected a JSON object", path.display())));
    }
    Ok(v)
}

/// Resolves file values, then command-line overrides, then defaults that
/// depend on the benchmark, and validates the result.
pub fn resolve(file: Option<Value>, overrides: Value) -> Result<RunConfig, CliError> {
    let mut doc = file.unwrap_or_else(|| Value::Object(Map::new()));
    merge(&mut doc, overrides);
    let benchmark = doc.get("benchmark").cloned().ok_or_else(|| CliError::Config("benchmark is not set".into()))?;
    let benchmark: Benchmark = serde_json::from_value(benchmark).map_err(|e| CliError::Config(format!("benchmark: {e}")))?;
    let obj = doc.as_object_mut().expect("config is an object");
    if !obj.contains_key("seeds") {
        let seeds: Vec<u64> = if benchmark == Benchmark::Physqa { vec![0] } else { (0..5).collect() };
        obj.insert("seeds".into(), serde_json::json!(seeds));
    }
    if benchmark == Benchmark::Avoid {
        let sim = obj.entry("sim").or_insert_with(|| Value::Object(Map::new()));
        if let Some(sim) = sim.as_object_mut() {
            sim.entry("dt").or_insert(serde_json::json!(AVOID_DT));
        }
    }
    let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

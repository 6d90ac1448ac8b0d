//! Benchmark drivers. Episodes and problems run on a worker pool; results
//! are collected in job order so output never depends on scheduling.

use std::fs;
use std::path::Path;
use std::time::Instant;

use apex_bench::avoid::{aggregate_avoid, run_avoid_episode, trajectory_csv, Difficulty, EpisodeRecord};
use apex_bench::physqa::{
    aggregate_suite, answer_problem, failed_record, generate_problems, grade_response, oracle_answer, parse_model_answer,
    Problem, ProblemRun, TaskType,
};
use apex_bench::tetris::{aggregate_tetris, run_tetris_episode, TetrisEpisode};
use apex_core::decision::{make_backend, DecisionBackend};
use apex_core::physics::SimConfig;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{Answerer, Benchmark, RunConfig};
use crate::persist::{AggregateRow, ResultEnvelope, ResultRecord};
use crate::CliError;

#[derive(Debug)]
pub struct RunOutcome {
    pub envelope: ResultEnvelope,
    /// Decisions or episodes in which the backend gave no reply.
    pub backend_errors: usize,
}

fn backend(cfg: &RunConfig) -> Result<Box<dyn DecisionBackend>, CliError> {
    Ok(make_backend(&cfg.backend)?)
}

fn to_value(x: &impl serde::Serialize) -> Value {
    serde_json::to_value(x).expect("record serializes")
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

struct PhysqaPass {
    records: Vec<ResultRecord>,
    rows: Vec<AggregateRow>,
    backend_errors: usize,
}

fn physqa_pass(cfg: &RunConfig, sim: &SimConfig<f64>, index_base: usize, dt_label: Option<f64>) -> Result<PhysqaPass, CliError> {
    let p = &cfg.physqa;
    let mut jobs: Vec<(u64, usize, Problem)> = Vec::new();
    for &seed in &cfg.seeds {
        for (ti, &task) in p.tasks.iter().enumerate() {
            for prob in generate_problems(task, p.n, seed)? {
                jobs.push((seed, ti * p.n + prob.id, prob));
            }
        }
    }
    let runs: Vec<ProblemRun> = jobs
        .par_iter()
        .map(|(_, _, prob)| match p.answerer {
            Answerer::Engine => answer_problem(prob, sim, None, p.tolerance).map_err(CliError::from),
            Answerer::Backend => {
                let mut b = backend(cfg)?;
                answer_problem(prob, sim, Some(b.as_mut()), p.tolerance).map_err(CliError::from)
            }
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::new();
    for &task in &p.tasks {
        let recs: Vec<_> = runs.iter().filter(|r| r.record.task_type == task).map(|r| r.record.clone()).collect();
        let mut labels = vec![("task", json!(task.name()))];
        if let Some(dt) = dt_label {
            labels.push(("dt", json!(dt)));
        }
        rows.push(AggregateRow::new(labels, aggregate_suite(&recs)?));
    }
    let backend_errors = runs.iter().filter(|r| r.error.is_some()).count();
    let records = jobs
        .iter()
        .zip(&runs)
        .map(|((seed, index, prob), run)| ResultRecord {
            benchmark: Benchmark::Physqa,
            seed: *seed,
            index: index_base + index,
            group: match dt_label {
                Some(dt) => format!("{}@dt={dt}", prob.task_type),
                None => prob.task_type.name().to_string(),
            },
            record: to_value(run),
        })
        .collect();
    Ok(PhysqaPass { records, rows, backend_errors })
}

pub fn run_physqa(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    if cfg.physqa.answerer == Answerer::Backend {
        backend(cfg)?;
    }
    let pass = physqa_pass(cfg, &cfg.sim, 0, None)?;
    let envelope = ResultEnvelope::new(cfg.clone(), pass.records, pass.rows, start.elapsed().as_secs_f64());
    Ok(RunOutcome { envelope, backend_errors: pass.backend_errors })
}

/// Runs the question suite once per step size in `physqa.dts`.
pub fn run_dt_ablation(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    if cfg.physqa.answerer == Answerer::Backend {
        backend(cfg)?;
    }
    let per_dt = cfg.physqa.tasks.len() * cfg.physqa.n;
    let (mut records, mut rows, mut errors) = (Vec::new(), Vec::new(), 0);
    for (i, &dt) in cfg.physqa.dts.iter().enumerate() {
        let sim = cfg.sim.with_dt(dt);
        sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let pass = physqa_pass(cfg, &sim, i * per_dt, Some(dt))?;
        records.extend(pass.records);
        rows.extend(pass.rows);
        errors += pass.backend_errors;
    }
    let envelope = ResultEnvelope::new(cfg.clone(), records, rows, start.elapsed().as_secs_f64());
    Ok(RunOutcome { envelope, backend_errors: errors })
}

/// Grades stored replies. Each answers line is either a reply object in
/// problem order or `{"problem_id": .., "answer": ..}`.
pub fn grade_answers(cfg: &RunConfig, problems: &[Problem], answers_text: &str) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    let mut replies: Vec<Option<String>> = vec![None; problems.len()];
    for (i, line) in answers_text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let v: Option<Value> = serde_json::from_str(line).ok();
        match v.as_ref().and_then(|v| v.get("problem_id").and_then(Value::as_u64).map(|id| (id, v))) {
            Some((id, v)) => {
                let slot = problems.iter().position(|p| p.id as u64 == id);
                let slot = slot.ok_or_else(|| CliError::Config(format!("answers line {}: unknown problem_id {id}", i + 1)))?;
                replies[slot] = v.get("answer").map(|a| match a {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                });
            }
            None if i < replies.len() => replies[i] = Some(line.to_string()),
            None => return Err(CliError::Config(format!("answers line {} has no matching problem", i + 1))),
        }
    }
    let mut records = Vec::new();
    let mut graded = Vec::new();
    for (i, (p, reply)) in problems.iter().zip(&replies).enumerate() {
        let key = oracle_answer(p, cfg.sim.gravity)?;
        let rec = match reply.as_deref().map(parse_model_answer) {
            Some(Ok(ans)) => grade_response(&ans, &key, cfg.physqa.tolerance),
            _ => failed_record(&key),
        };
        records.push(ResultRecord {
            benchmark: Benchmark::Physqa,
            seed: 0,
            index: i,
            group: p.task_type.name().to_string(),
            record: json!({"record": rec, "raw_text": reply}),
        });
        graded.push(rec);
    }
    let mut rows = Vec::new();
    for task in TaskType::ALL {
        let recs: Vec<_> = graded.iter().filter(|r| r.task_type == task).cloned().collect();
        if !recs.is_empty() {
            rows.push(AggregateRow::new(vec![("task", json!(task.name()))], aggregate_suite(&recs)?));
        }
    }
    let envelope = ResultEnvelope::new(cfg.clone(), records, rows, start.elapsed().as_secs_f64());
    Ok(RunOutcome { envelope, backend_errors: 0 })
}

/// Problems and answer keys as JSON lines.
pub fn generate(cfg: &RunConfig) -> Result<(String, String), CliError> {
    let (mut problems, mut keys) = (String::new(), String::new());
    for &seed in &cfg.seeds {
        for &task in &cfg.physqa.tasks {
            for p in generate_problems(task, cfg.physqa.n, seed)? {
                keys += &serde_json::to_string(&oracle_answer(&p, cfg.sim.gravity)?).expect("key serializes");
                keys.push('\n');
                problems += &serde_json::to_string(&p).expect("problem serializes");
                problems.push('\n');
            }
        }
    }
    Ok((problems, keys))
}

pub fn run_tetris(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    backend(cfg)?;
    let caps = cfg.tetris.caps();
    let frames_dir = cfg.tetris.frames.as_deref();
    if let Some(dir) = frames_dir {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut episodes: Vec<TetrisEpisode> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<TetrisEpisode, CliError> {
            let mut b = backend(cfg)?;
            Ok(run_tetris_episode(b.as_mut(), seed, &caps, frames_dir.is_some()))
        })
        .collect::<Result<_, _>>()?;
    if let Some(dir) = frames_dir {
        for ep in &mut episodes {
            let path = dir.join(format!("seed{}.txt", ep.seed));
            fs::write(&path, ep.frames.join("\n\n") + "\n").map_err(|e| io_err(&path, e))?;
            ep.frames.clear();
        }
    }
    let summary = aggregate_tetris(&episodes)?;
    let records = episodes
        .iter()
        .map(|ep| ResultRecord { benchmark: Benchmark::Tetris, seed: ep.seed, index: 0, group: "tetris".into(), record: to_value(ep) })
        .collect();
    let rows = vec![AggregateRow::new(vec![("benchmark", json!("tetris"))], summary)];
    let errors = episodes.iter().filter(|e| e.failed).count();
    let envelope = ResultEnvelope::new(cfg.clone(), records, rows, start.elapsed().as_secs_f64());
    Ok(RunOutcome { envelope, backend_errors: errors })
}

struct AvoidPass {
    records: Vec<ResultRecord>,
    episodes: Vec<EpisodeRecord>,
}

fn avoid_pass(cfg: &RunConfig, index_base: usize, group_prefix: &str) -> Result<AvoidPass, CliError> {
    let acfg = cfg.avoid_config();
    let jobs: Vec<(usize, Difficulty, u64)> = cfg
        .avoid
        .difficulties
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| cfg.seeds.iter().map(move |&s| (i, d, s)))
        .collect();
    let episodes: Vec<EpisodeRecord> = jobs
        .par_iter()
        .map(|&(_, d, seed)| -> Result<EpisodeRecord, CliError> {
            let mut b = backend(cfg)?;
            Ok(run_avoid_episode(b.as_mut(), d, seed, &acfg)?)
        })
        .collect::<Result<_, _>>()?;
    if let Some(dir) = &cfg.avoid.trajectories {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for ep in &episodes {
            let path = dir.join(format!("{group_prefix}{}_seed{}.csv", ep.difficulty, ep.seed));
            fs::write(&path, trajectory_csv(ep)).map_err(|e| io_err(&path, e))?;
        }
    }
    let records = jobs
        .iter()
        .zip(&episodes)
        .map(|(&(i, d, seed), ep)| ResultRecord {
            benchmark: Benchmark::Avoid,
            seed,
            index: index_base + i,
            group: format!("{group_prefix}{d}"),
            record: to_value(ep),
        })
        .collect();
    Ok(AvoidPass { records, episodes })
}

fn avoid_errors(episodes: &[EpisodeRecord]) -> usize {
    episodes.iter().flat_map(|e| &e.log).filter(|d| d.error.is_some()).count()
}

pub fn run_avoid(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    backend(cfg)?;
    let pass = avoid_pass(cfg, 0, "")?;
    let mut rows = Vec::new();
    for &d in &cfg.avoid.difficulties {
        let eps: Vec<_> = pass.episodes.iter().filter(|e| e.difficulty == d).cloned().collect();
        rows.push(AggregateRow::new(vec![("difficulty", json!(d.name()))], aggregate_avoid(&eps)?));
    }
    let errors = avoid_errors(&pass.episodes);
    let envelope = ResultEnvelope::new(cfg.clone(), pass.records, rows, start.elapsed().as_secs_f64());
    Ok(RunOutcome { envelope, backend_errors: errors })
}

/// Runs the avoidance episodes once per salience budget in `avoid.top_ks`.
pub fn run_topk_ablation(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    backend(cfg)?;
    let (mut records, mut rows, mut errors) = (Vec::new(), Vec::new(), 0);
    let per_k = cfg.avoid.difficulties.len();
    for (i, &k) in cfg.avoid.top_ks.iter().enumerate() {
        let mut c = cfg.clone();
        c.salience.k = k;
        let pass = avoid_pass(&c, i * per_k, &format!("k{k}_"))?;
        for &d in &cfg.avoid.difficulties {
            let eps: Vec<_> = pass.episodes.iter().filter(|e| e.difficulty == d).cloned().collect();
            rows.push(AggregateRow::new(vec![("k", json!(k)), ("difficulty", json!(d.name()))], aggregate_avoid(&eps)?));
        }
        errors += avoid_errors(&pass.episodes);
        records.extend(pass.records);
    }
    let envelope = ResultEnvelope::new(cfg.clone(), records, rows, start.elapsed().as_secs_f64());
    Ok(RunOutcome { envelope, backend_errors: errors })
}

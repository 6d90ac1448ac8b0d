//! Walled plane with moving obstacles and a steerable agent.

use std::collections::BTreeMap;
use std::fmt;

use apex_core::decision::{assemble_prompt, decide, ActionPlan, DecisionBackend, TemplateId};
use apex_core::physics::{clamp_in_square, euler_step_in_place, reflect_in_square, SimConfig};
use apex_core::rollout::{
    describe_outcomes, enumerate_actions, rollout_action, Direction, EnvView, RolloutConfig, RolloutOutcome,
    DEFAULT_AGENT_SPEED, DEFAULT_SAFE_THRESHOLD,
};
use apex_core::salience::{score_edges, select_top_k, summarize, SalienceConfig};
use apex_core::scenegraph::{build_scene_graph, diff_graph, ObjectKind, ObjectState, WorldState};
use apex_core::{Error, Result, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const WALL: f64 = 5.0;
pub const BODY_RADIUS: f64 = 0.3;
pub const AGENT_ID: &str = "agent";
const MIN_START_GAP: f64 = 1.5;
const MAX_PLACEMENT_TRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Simple,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Simple, Difficulty::Medium, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Simple => "simple",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.name() == s)
    }

    pub fn obstacle_count(self) -> usize {
        match self {
            Difficulty::Simple => 2,
            Difficulty::Medium => 4,
            Difficulty::Hard => 6,
        }
    }

    pub fn obstacle_speed(self) -> f64 {
        match self {
            Difficulty::Simple => 1.0,
            Difficulty::Medium => 2.0,
            Difficulty::Hard => 3.0,
        }
    }

    fn salt(self) -> u64 {
        match self {
            Difficulty::Simple => 0x5150,
            Difficulty::Medium => 0x3ed1,
            Difficulty::Hard => 0x4a2d,
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidWorld {
    pub world: WorldState<f64>,
    pub target: Option<Vec3<f64>>,
    /// Obstacles re-aim at the agent every step when set.
    pub homing: bool,
}

impl AvoidWorld {
    pub fn agent(&self) -> &ObjectState<f64> {
        self.world.get(AGENT_ID).expect("world has an agent")
    }

    pub fn time(&self) -> f64 {
        self.world.timestamp
    }
}

fn agent() -> ObjectState<f64> {
    ObjectState::at_rest(AGENT_ID, ObjectKind::Agent, Vec3::zero()).with_radius(BODY_RADIUS)
}

pub fn obstacle(id: &str, position: Vec3<f64>, velocity: Vec3<f64>) -> ObjectState<f64> {
    ObjectState::at_rest(id, ObjectKind::Obstacle, position).with_velocity(velocity).with_radius(BODY_RADIUS)
}

/// Agent at the origin plus seeded obstacles at least 1.5 m from the agent
/// and the walls, moving in random directions at the difficulty speed.
pub fn init_avoid_world(difficulty: Difficulty, seed: u64) -> Result<AvoidWorld> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (difficulty.salt() << 40));
    let mut objects = vec![agent()];
    let span = WALL - MIN_START_GAP;
    for i in 0..difficulty.obstacle_count() {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let p = Vec3::new(rng.gen_range(-span..=span), rng.gen_range(-span..=span), 0.0);
            let clear_of_agent = p.norm() >= MIN_START_GAP;
            let clear_of_others = objects[1..].iter().all(|o| o.position.distance(p) > 2.0 * BODY_RADIUS);
            if clear_of_agent && clear_of_others {
                placed = Some(p);
                break;
            }
        }
        let p = placed.ok_or_else(|| Error::InvalidInput(format!("seed {seed}: could not place obstacle {i}")))?;
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let v = Vec3::new(heading.cos(), heading.sin(), 0.0) * difficulty.obstacle_speed();
        objects.push(obstacle(&format!("cat{}", i + 1), p, v));
    }
    let target = Vec3::new(rng.gen_range(-4.0..=4.0), rng.gen_range(-4.0..=4.0), 0.0);
    Ok(AvoidWorld { world: WorldState::new(0.0, objects), target: Some(target), homing: false })
}

/// True when any obstacle center is within the radius sum of the agent.
pub fn in_contact(world: &WorldState<f64>) -> bool {
    let Some(a) = world.get(AGENT_ID) else { return false };
    world
        .objects
        .iter()
        .filter(|o| o.kind == ObjectKind::Obstacle)
        .any(|o| o.position.distance(a.position) <= a.radius + o.radius)
}

/// Advances by `dt`: linear motion, wall reflection for obstacles, wall stop
/// for the agent. Returns whether the agent touches an obstacle afterwards.
pub fn world_step(w: &mut AvoidWorld, dt: f64) -> bool {
    if w.homing {
        let target = w.agent().position;
        for o in w.world.objects.iter_mut().filter(|o| o.kind == ObjectKind::Obstacle) {
            let speed = o.velocity.norm();
            if let Some(dir) = (target - o.position).normalized() {
                o.velocity = dir * speed;
            }
        }
    }
    euler_step_in_place(&mut w.world, dt, |o| o.acceleration);
    for o in &mut w.world.objects {
        if o.kind == ObjectKind::Agent {
            clamp_in_square(&mut o.position, &mut o.velocity, WALL);
        } else {
            reflect_in_square(&mut o.position, &mut o.velocity, WALL);
        }
    }
    in_contact(&w.world)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvoidConfig {
    pub decision_interval: f64,
    pub horizon: f64,
    pub safe_threshold: f64,
    pub dt: f64,
    pub salience: SalienceConfig<f64>,
    pub agent_speed: f64,
    pub homing: bool,
}

impl Default for AvoidConfig {
    fn default() -> Self {
        Self {
            decision_interval: 1.0,
            horizon: 10.0,
            safe_threshold: DEFAULT_SAFE_THRESHOLD,
            dt: 0.01,
            salience: SalienceConfig::default(),
            agent_speed: DEFAULT_AGENT_SPEED,
            homing: false,
        }
    }
}

impl AvoidConfig {
    fn steps(&self, seconds: f64) -> Result<u64> {
        let n = (seconds / self.dt).round();
        if !(n >= 1.0) || ((n * self.dt) - seconds).abs() > 1e-9 * seconds.max(1.0) {
            return Err(Error::InvalidInput(format!("{seconds} s is not a whole number of {} s steps", self.dt)));
        }
        Ok(n as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidDecision {
    pub time: f64,
    pub summary: String,
    pub raw_text: Option<String>,
    pub chosen: Option<Direction>,
    pub chosen_safe: bool,
    pub any_safe: bool,
    pub valid: bool,
    /// Backend failure text, when the backend produced no reply.
    pub error: Option<String>,
    pub latency_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub positions: BTreeMap<String, Vec3<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub difficulty: Difficulty,
    pub seed: u64,
    pub survived: bool,
    pub survival_time: f64,
    pub invalid_actions: u32,
    pub decisions: u32,
    pub log: Vec<AvoidDecision>,
    #[serde(skip)]
    pub trajectory: Vec<TrajectorySample>,
}

/// Rollout outcomes of all nine moves from the current world.
pub fn evaluate_moves(w: &AvoidWorld, cfg: &AvoidConfig) -> Result<Vec<RolloutOutcome>> {
    let rcfg = RolloutConfig {
        sim: SimConfig::default().with_dt(cfg.dt),
        safe_threshold: cfg.safe_threshold,
        agent_speed: cfg.agent_speed,
        bounds: Some(WALL),
        target: w.target,
    };
    enumerate_actions(&EnvView::Avoid { decision_duration: cfg.decision_interval })
        .iter()
        .map(|a| rollout_action(&w.world, a, &rcfg))
        .collect()
}

/// Summary of the `k` most urgent pairs between two snapshots.
pub fn scene_summary(prev: &WorldState<f64>, cur: &WorldState<f64>, dt_obs: f64, cfg: &SalienceConfig<f64>) -> Result<String> {
    cfg.validate()?;
    let g0 = build_scene_graph(&prev.objects, 0.0)?;
    let g1 = build_scene_graph(&cur.objects, dt_obs)?;
    let diff = diff_graph(&g0, &g1)?;
    let scores = score_edges(&diff, cur, cfg);
    let sub = select_top_k(&scores, cfg.k)?;
    Ok(summarize(&sub, cur, Some(AGENT_ID)).text)
}

fn state_text(w: &AvoidWorld) -> String {
    let r2 = |x: f64| (x * 100.0).round() / 100.0;
    let pos = |v: Vec3<f64>| [r2(v.x), r2(v.y)];
    let a = w.agent();
    let obstacles: Vec<_> = w
        .world
        .objects
        .iter()
        .filter(|o| o.kind == ObjectKind::Obstacle)
        .map(|o| serde_json::json!({"id": o.id, "position": pos(o.position), "velocity": pos(o.velocity)}))
        .collect();
    let mut doc = serde_json::json!({
        "time": r2(w.time()),
        "agent": {"position": pos(a.position), "radius": a.radius},
        "obstacles": obstacles,
    });
    if let Some(t) = w.target {
        doc["target"] = serde_json::json!(pos(t));
    }
    doc.to_string()
}

fn back_extrapolate(world: &WorldState<f64>, dt_obs: f64) -> WorldState<f64> {
    let mut prev = world.clone();
    for o in &mut prev.objects {
        o.position = o.position - o.velocity * dt_obs;
    }
    prev
}

fn sample(w: &AvoidWorld) -> TrajectorySample {
    TrajectorySample { t: w.time(), positions: w.world.objects.iter().map(|o| (o.id.clone(), o.position)).collect() }
}

/// Runs one episode from a prepared world.
pub fn run_avoid_world(
    backend: &mut dyn DecisionBackend,
    mut w: AvoidWorld,
    difficulty: Difficulty,
    seed: u64,
    cfg: &AvoidConfig,
) -> Result<EpisodeRecord> {
    let per_decision = cfg.steps(cfg.decision_interval)?;
    let total = cfg.steps(cfg.horizon)?;
    let moves = Direction::ALL.iter().map(|d| d.label()).collect::<Vec<_>>().join(", ");
    let mut prev = back_extrapolate(&w.world, cfg.decision_interval);
    let mut rec = EpisodeRecord {
        difficulty,
        seed,
        survived: true,
        survival_time: cfg.horizon,
        invalid_actions: 0,
        decisions: 0,
        log: Vec::new(),
        trajectory: vec![sample(&w)],
    };
    if in_contact(&w.world) {
        rec.survived = false;
        rec.survival_time = 0.0;
        return Ok(rec);
    }

    let mut step = 0u64;
    while step < total {
        let summary = scene_summary(&prev, &w.world, cfg.decision_interval, &cfg.salience)?;
        let outcomes = evaluate_moves(&w, cfg)?;
        let ctx: BTreeMap<String, String> =
            [("state".to_string(), state_text(&w)), ("available_move".to_string(), moves.clone())].into_iter().collect();
        let bundle = assemble_prompt(TemplateId::Avoid, &ctx, &summary, &describe_outcomes(&outcomes))?;
        let d = decide(backend, &bundle, &outcomes);

        let any_safe = outcomes.iter().any(|o| o.safe);
        let error = match &d.plan {
            Err(e @ (Error::Backend(_) | Error::BackendConfig(_))) => Some(e.to_string()),
            _ => None,
        };
        let (plan, parsed) = match d.plan {
            Ok(p @ ActionPlan::Avoid(_)) => (p, true),
            _ => (ActionPlan::stay(cfg.decision_interval), false),
        };
        let ActionPlan::Avoid(plan_steps) = &plan else { unreachable!() };
        let chosen = plan_steps[0].direction;
        let chosen_safe = outcomes.iter().find(|o| o.action.label() == chosen.label()).is_some_and(|o| o.safe);
        let valid = parsed && (chosen_safe || !any_safe);
        rec.decisions += 1;
        if !valid {
            rec.invalid_actions += 1;
        }
        rec.log.push(AvoidDecision {
            time: w.time(),
            summary,
            raw_text: d.raw_text,
            chosen: parsed.then_some(chosen),
            chosen_safe,
            any_safe,
            valid,
            error,
            latency_s: d.latency_s,
        });

        prev = w.world.clone();
        let window = per_decision.min(total - step);
        let mut schedule = plan_steps.iter().flat_map(|s| {
            let n = (s.duration / cfg.dt).round().max(1.0) as u64;
            std::iter::repeat_n(s.direction, n as usize)
        });
        for _ in 0..window {
            let dir = schedule.next().unwrap_or(Direction::Stay);
            if let Some(a) = w.world.get_mut(AGENT_ID) {
                a.velocity = dir.unit() * cfg.agent_speed;
            }
            let hit = world_step(&mut w, cfg.dt);
            step += 1;
            w.world.timestamp = step as f64 * cfg.dt;
            if step % 10 == 0 {
                rec.trajectory.push(sample(&w));
            }
            if hit {
                rec.survived = false;
                rec.survival_time = w.time();
                return Ok(rec);
            }
        }
    }
    rec.survival_time = cfg.horizon;
    Ok(rec)
}

pub fn run_avoid_episode(
    backend: &mut dyn DecisionBackend,
    difficulty: Difficulty,
    seed: u64,
    cfg: &AvoidConfig,
) -> Result<EpisodeRecord> {
    let mut w = init_avoid_world(difficulty, seed)?;
    w.homing = cfg.homing;
    run_avoid_world(backend, w, difficulty, seed, cfg)
}

/// Single-obstacle scene where moving west passes 0.54 m from an obstacle
/// sliding into that corridor, while other moves keep well over 2 m.
pub fn narrow_corridor_fixture() -> AvoidWorld {
    let cat = obstacle("cat1", Vec3::new(-1.5, 3.14, 0.0), Vec3::new(0.0, -2.0, 0.0));
    AvoidWorld { world: WorldState::new(0.0, vec![agent(), cat]), target: None, homing: false }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvoidMetrics {
    pub episodes: usize,
    /// Percent of episodes survived.
    #[serde(rename = "CFR")]
    pub cfr: f64,
    /// Invalid decisions per hundred decisions.
    #[serde(rename = "IAR")]
    pub iar: f64,
    /// Mean survival time, s.
    #[serde(rename = "AST")]
    pub ast: f64,
    pub mean_latency_s: f64,
}

pub fn aggregate_avoid(records: &[EpisodeRecord]) -> Result<AvoidMetrics> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no episodes to aggregate".into()));
    }
    let n = records.len() as f64;
    let decisions: u32 = records.iter().map(|r| r.decisions).sum();
    let invalid: u32 = records.iter().map(|r| r.invalid_actions).sum();
    let lat: Vec<f64> = records.iter().flat_map(|r| r.log.iter().map(|d| d.latency_s)).collect();
    Ok(AvoidMetrics {
        episodes: records.len(),
        cfr: 100.0 * records.iter().filter(|r| r.survived).count() as f64 / n,
        iar: if decisions == 0 { 0.0 } else { 100.0 * f64::from(invalid) / f64::from(decisions) },
        ast: records.iter().map(|r| r.survival_time).sum::<f64>() / n,
        mean_latency_s: if lat.is_empty() { 0.0 } else { lat.iter().sum::<f64>() / lat.len() as f64 },
    })
}

/// Trajectory as CSV rows: `t`, then x,y,z per object.
pub fn trajectory_csv(rec: &EpisodeRecord) -> String {
    let Some(first) = rec.trajectory.first() else {
        return String::new();
    };
    let ids: Vec<&String> = first.positions.keys().collect();
    let mut out = String::from("t");
    for id in &ids {
        out += &format!(",{id}_x,{id}_y,{id}_z");
    }
    out.push('\n');
    for s in &rec.trajectory {
        out += &format!("{:.2}", s.t);
        for id in &ids {
            let p = s.positions[*id];
            out += &format!(",{:.4},{:.4},{:.4}", p.x, p.y, p.z);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use apex_core::decision::{make_backend, BackendConfig};

    #[test]
    fn difficulty_table() {
        let w = init_avoid_world(Difficulty::Simple, 3).unwrap();
        assert_eq!(w.world.objects.len(), 3);
        assert!(w.world.objects[1..].iter().all(|o| (o.velocity.norm() - 1.0).abs() < 1e-12));
        let w = init_avoid_world(Difficulty::Hard, 3).unwrap();
        assert_eq!(w.world.objects.len(), 7);
        assert!(w.world.objects[1..].iter().all(|o| (o.velocity.norm() - 3.0).abs() < 1e-12));
        assert_eq!(init_avoid_world(Difficulty::Hard, 3).unwrap(), w);
    }

    #[test]
    fn placement_respects_gaps() {
        for seed in 0..50 {
            let w = init_avoid_world(Difficulty::Hard, seed).unwrap();
            for o in &w.world.objects[1..] {
                assert!(o.position.norm() >= 1.5);
                assert!(o.position.x.abs() <= 3.5 && o.position.y.abs() <= 3.5);
            }
        }
    }

    #[test]
    fn wall_bounce() {
        let mut w = AvoidWorld {
            world: WorldState::new(0.0, vec![agent(), obstacle("c", Vec3::new(4.8, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0))]),
            target: None,
            homing: false,
        };
        assert!(!world_step(&mut w, 0.5));
        let c = w.world.get("c").unwrap();
        assert!((c.position.x - 4.7).abs() < 1e-12);
        assert_eq!(c.velocity, Vec3::new(-1.0, 0.0, 0.0));
    }

    #[test]
    fn contact_ends_at_radius_sum() {
        let mut w = AvoidWorld {
            world: WorldState::new(0.0, vec![agent(), obstacle("c", Vec3::new(0.62, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0))]),
            target: None,
            homing: false,
        };
        assert!(world_step(&mut w, 0.1));
    }

    #[test]
    fn empty_world_only_advances_clock() {
        let mut w = AvoidWorld { world: WorldState::new(0.0, vec![agent()]), target: None, homing: false };
        assert!(!world_step(&mut w, 0.25));
        assert_eq!(w.time(), 0.25);
        assert_eq!(w.agent().position, Vec3::zero());
    }

    fn decision(latency_s: f64) -> AvoidDecision {
        AvoidDecision {
            time: 0.0,
            summary: String::new(),
            raw_text: None,
            chosen: None,
            chosen_safe: true,
            any_safe: true,
            valid: true,
            error: None,
            latency_s,
        }
    }

    #[test]
    fn aggregates() {
        let rec = |survived: bool, t: f64, invalid: u32| EpisodeRecord {
            difficulty: Difficulty::Simple,
            seed: 0,
            survived,
            survival_time: t,
            invalid_actions: invalid,
            decisions: 8,
            log: (0..8).map(|_| decision(0.5)).collect(),
            trajectory: vec![],
        };
        let m = aggregate_avoid(&[rec(true, 10.0, 2), rec(true, 10.0, 0), rec(true, 10.0, 0), rec(false, 4.0, 0), rec(false, 2.0, 0)]).unwrap();
        assert_eq!(m.cfr, 60.0);
        assert_eq!(m.iar, 5.0);
        assert_eq!(m.ast, 7.2);
        assert_eq!(m.mean_latency_s, 0.5);
        assert!(aggregate_avoid(&[]).is_err());
    }

    #[test]
    fn obstacle_free_world_survives() {
        let mut b = make_backend(&BackendConfig::fixed("nonsense")).unwrap();
        let w = AvoidWorld { world: WorldState::new(0.0, vec![agent()]), target: None, homing: false };
        let rec = run_avoid_world(b.as_mut(), w, Difficulty::Simple, 0, &AvoidConfig::default()).unwrap();
        assert!(rec.survived);
        assert_eq!(rec.survival_time, 10.0);
        assert_eq!(rec.decisions, 10);
        assert_eq!(rec.invalid_actions, 10);
    }
}

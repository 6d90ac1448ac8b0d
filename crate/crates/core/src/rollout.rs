//! Candidate-action enumeration and forward rollouts.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{self, SimConfig};
use crate::scenegraph::{ObjectKind, WorldState};
use crate::vec3::Vec3;

/// Agent ground speed while executing a compass move, m/s.
pub const DEFAULT_AGENT_SPEED: f64 = 1.5;
/// Clearance a rollout must keep to be labelled safe, m.
pub const DEFAULT_SAFE_THRESHOLD: f64 = 0.5;

/// Compass moves in enumeration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    W,
    E,
    N,
    S,
    NW,
    NE,
    SW,
    SE,
    #[serde(rename = "stay")]
    Stay,
}

impl Direction {
    pub const ALL: [Direction; 9] = [
        Direction::W,
        Direction::E,
        Direction::N,
        Direction::S,
        Direction::NW,
        Direction::NE,
        Direction::SW,
        Direction::SE,
        Direction::Stay,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Direction::W => "W",
            Direction::E => "E",
            Direction::N => "N",
            Direction::S => "S",
            Direction::NW => "NW",
            Direction::NE => "NE",
            Direction::SW => "SW",
            Direction::SE => "SE",
            Direction::Stay => "stay",
        }
    }

    pub fn parse(label: &str) -> Option<Direction> {
        let l = label.trim();
        Self::ALL.into_iter().find(|d| d.label().eq_ignore_ascii_case(l))
    }

    /// Unit heading in the xy-plane (+x east, +y north); zero for stay.
    pub fn unit(self) -> Vec3<f64> {
        let d = std::f64::consts::FRAC_1_SQRT_2;
        let (x, y) = match self {
            Direction::W => (-1.0, 0.0),
            Direction::E => (1.0, 0.0),
            Direction::N => (0.0, 1.0),
            Direction::S => (0.0, -1.0),
            Direction::NW => (-d, d),
            Direction::NE => (d, d),
            Direction::SW => (-d, -d),
            Direction::SE => (d, -d),
            Direction::Stay => (0.0, 0.0),
        };
        Vec3::new(x, y, 0.0)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Avoid,
    Tetris,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "snake_case")]
pub enum CandidateAction {
    Avoid {
        direction: Direction,
        duration: f64,
    },
    /// Rotate `rotation` times at spawn, shift by `shift` columns (negative is
    /// left), then hard drop. `column` is the resulting left edge.
    Tetris {
        rotation: u8,
        column: i32,
        shift: i32,
    },
}

impl CandidateAction {
    pub fn env(&self) -> EnvKind {
        match self {
            CandidateAction::Avoid { .. } => EnvKind::Avoid,
            CandidateAction::Tetris { .. } => EnvKind::Tetris,
        }
    }

    pub fn label(&self) -> String {
        match self {
            CandidateAction::Avoid { direction, .. } => direction.label().to_owned(),
            CandidateAction::Tetris { rotation, column, .. } => format!("rotation {rotation}, column {column}"),
        }
    }
}

/// Board features after a simulated placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardDescriptor {
    pub lines_cleared: u32,
    pub holes: u32,
    pub bumpiness: u32,
    pub max_height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub action: CandidateAction,
    pub collision: bool,
    /// Smallest surface-to-surface clearance to any obstacle, m.
    pub min_obstacle_distance: f64,
    pub target_distance: Option<f64>,
    pub board: Option<BoardDescriptor>,
    pub duration: f64,
    pub final_positions: BTreeMap<String, Vec3<f64>>,
    pub safe: bool,
}

impl RolloutOutcome {
    /// Outcome of a simulated Tetris placement. Placements are never unsafe.
    pub fn placement(action: CandidateAction, board: BoardDescriptor) -> Self {
        Self {
            action,
            collision: false,
            min_obstacle_distance: 0.0,
            target_distance: None,
            board: Some(board),
            duration: 0.0,
            final_positions: BTreeMap::new(),
            safe: true,
        }
    }
}

/// Source of feasible Tetris placements as `(rotation, column, shift)`.
pub trait PlacementView {
    fn placements(&self) -> Vec<(u8, i32, i32)>;
}

pub enum EnvView<'a> {
    Avoid { decision_duration: f64 },
    Tetris(&'a dyn PlacementView),
}

pub fn enumerate_actions(view: &EnvView<'_>) -> Vec<CandidateAction> {
    match view {
        EnvView::Avoid { decision_duration } => Direction::ALL
            .into_iter()
            .map(|direction| CandidateAction::Avoid { direction, duration: *decision_duration })
            .collect(),
        EnvView::Tetris(v) => v
            .placements()
            .into_iter()
            .map(|(rotation, column, shift)| CandidateAction::Tetris { rotation, column, shift })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub sim: SimConfig<f64>,
    pub safe_threshold: f64,
    pub agent_speed: f64,
    /// Square walls at ±`bounds` in x and y. Obstacles bounce, the agent stops.
    pub bounds: Option<f64>,
    pub target: Option<Vec3<f64>>,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            safe_threshold: DEFAULT_SAFE_THRESHOLD,
            agent_speed: DEFAULT_AGENT_SPEED,
            bounds: None,
            target: None,
        }
    }
}

fn min_clearance(world: &WorldState<f64>, agent: usize) -> f64 {
    let a = &world.objects[agent];
    world
        .objects
        .iter()
        .enumerate()
        .filter(|(i, o)| *i != agent && o.kind != ObjectKind::Agent)
        .map(|(_, o)| a.position.distance(o.position) - (a.radius + o.radius))
        .fold(f64::INFINITY, f64::min)
}

/// Applies a compass move to the agent and simulates every object forward
/// open-loop for the move's duration.
pub fn rollout_action(world: &WorldState<f64>, action: &CandidateAction, cfg: &RolloutConfig) -> Result<RolloutOutcome> {
    let CandidateAction::Avoid { direction, duration } = *action else {
        return Err(Error::invalid("Tetris placements are rolled out by the board engine"));
    };
    if !(duration > 0.0) {
        return Err(Error::invalid("move duration must be > 0"));
    }
    let agent = world
        .objects
        .iter()
        .position(|o| o.kind == ObjectKind::Agent)
        .ok_or_else(|| Error::invalid("world has no agent"))?;

    let mut state = world.clone();
    state.objects[agent].velocity = direction.unit() * cfg.agent_speed;
    state.objects[agent].acceleration = Vec3::zero();

    let (full_steps, remainder) = physics::step_plan(duration, &cfg.sim)?;
    let mut clearance = min_clearance(&state, agent);
    let mut collision = clearance <= 0.0;

    let total = full_steps + u64::from(remainder > 0.0);
    let mut step = 0;
    while !collision && step < total {
        step += 1;
        let h = if step <= full_steps { cfg.sim.dt } else { remainder };
        physics::euler_step_in_place(&mut state, h, |o| cfg.sim.acceleration_of(o));
        if let Some(half) = cfg.bounds {
            for (i, o) in state.objects.iter_mut().enumerate() {
                if i == agent {
                    physics::clamp_in_square(&mut o.position, &mut o.velocity, half);
                } else {
                    physics::reflect_in_square(&mut o.position, &mut o.velocity, half);
                }
            }
        }
        let c = min_clearance(&state, agent);
        clearance = clearance.min(c);
        collision = c <= 0.0;
    }

    let min_obstacle_distance = if clearance.is_finite() { clearance.max(0.0) } else { f64::MAX };
    let agent_pos = state.objects[agent].position;
    Ok(RolloutOutcome {
        action: action.clone(),
        collision,
        min_obstacle_distance,
        target_distance: cfg.target.map(|t| agent_pos.distance(t)),
        board: None,
        duration,
        final_positions: state.objects.iter().map(|o| (o.id.clone(), o.position)).collect(),
        safe: !collision && min_obstacle_distance > cfg.safe_threshold,
    })
}

pub const NO_ACTIONS: &str = "No feasible actions.";

/// One line per outcome, in the given order.
pub fn describe_outcomes(outcomes: &[RolloutOutcome]) -> String {
    if outcomes.is_empty() {
        return NO_ACTIONS.to_owned();
    }
    outcomes.iter().map(describe_one).collect::<Vec<_>>().join("\n")
}

fn describe_one(o: &RolloutOutcome) -> String {
    if let Some(b) = o.board {
        return format!(
            "- {}: lines cleared {}, holes {}, bumpiness {}, max height {}",
            o.action.label(),
            b.lines_cleared,
            b.holes,
            b.bumpiness,
            b.max_height
        );
    }
    let mut line = format!(
        "- {}: {}, min distance {:.2} m, collision: {}",
        o.action.label(),
        if o.safe { "Safe" } else { "Unsafe" },
        o.min_obstacle_distance,
        o.collision
    );
    if let Some(d) = o.target_distance {
        line.push_str(&format!(", target distance {d:.2} m"));
    }
    line
}

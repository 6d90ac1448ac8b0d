//! Tetris board, placement enumeration and episode runner.

use std::collections::BTreeMap;
use std::fmt;

use apex_core::decision::{assemble_prompt, decide, ActionPlan, DecisionBackend, TemplateId, TetrisMove};
use apex_core::rollout::{
    describe_outcomes, enumerate_actions, BoardDescriptor, CandidateAction, EnvView, PlacementView, RolloutOutcome,
};
use apex_core::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_ROWS: usize = 20;
pub const DEFAULT_COLS: usize = 10;
pub const DEFAULT_BLOCKS: usize = 15;
pub const POINTS_PER_LINE: u32 = 100;

pub const BLANK: u8 = 0;
pub const ACTIVE: u8 = 1;
pub const LANDED: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PieceKind {
    I,
    O,
    T,
    S,
    Z,
    J,
    L,
}

impl PieceKind {
    pub const ALL: [PieceKind; 7] = [PieceKind::I, PieceKind::O, PieceKind::T, PieceKind::S, PieceKind::Z, PieceKind::J, PieceKind::L];

    /// Spawn orientation in its minimal bounding box, row 0 on top.
    pub fn shape(self) -> Shape {
        let rows: &[&str] = match self {
            PieceKind::I => &["####"],
            PieceKind::O => &["##", "##"],
            PieceKind::T => &["###", ".#."],
            PieceKind::S => &[".##", "##."],
            PieceKind::Z => &["##.", ".##"],
            PieceKind::J => &["#..", "###"],
            PieceKind::L => &["..#", "###"],
        };
        Shape::parse(rows)
    }
}

impl fmt::Display for PieceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    /// Filled `(row, col)` offsets, sorted.
    pub cells: Vec<(usize, usize)>,
}

impl Shape {
    fn parse(rows: &[&str]) -> Self {
        let mut cells = Vec::new();
        for (r, line) in rows.iter().enumerate() {
            for (c, ch) in line.chars().enumerate() {
                if ch == '#' {
                    cells.push((r, c));
                }
            }
        }
        Shape { height: rows.len(), width: rows[0].len(), cells }
    }

    /// Quarter turn clockwise.
    pub fn rotated(&self) -> Self {
        let mut cells: Vec<_> = self.cells.iter().map(|&(r, c)| (c, self.height - 1 - r)).collect();
        cells.sort_unstable();
        Shape { height: self.width, width: self.height, cells }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivePiece {
    pub kind: PieceKind,
    pub rotation: u8,
    pub shape: Shape,
    pub row: i32,
    pub col: i32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Board {
    pub rows: usize,
    pub cols: usize,
    /// Landed cells only; row 0 is the top.
    pub grid: Vec<Vec<u8>>,
    pub score: u32,
    pub lines_cleared: u32,
    pub blocks_placed: u32,
}

impl Default for Board {
    fn default() -> Self {
        Self::new(DEFAULT_ROWS, DEFAULT_COLS)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardStats {
    pub max_height: u32,
    pub holes: u32,
    pub bumpiness: u32,
}

impl Board {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols, grid: vec![vec![BLANK; cols]; rows], score: 0, lines_cleared: 0, blocks_placed: 0 }
    }

    /// Builds a board from text rows of `0`/`2` (or `.`/`#`), top row first.
    pub fn from_rows(rows: &[&str]) -> Self {
        let grid: Vec<Vec<u8>> = rows
            .iter()
            .map(|r| r.chars().filter(|c| !c.is_whitespace()).map(|c| if c == '2' || c == '#' { LANDED } else { BLANK }).collect())
            .collect();
        Self { rows: grid.len(), cols: grid[0].len(), grid, score: 0, lines_cleared: 0, blocks_placed: 0 }
    }

    fn fits(&self, shape: &Shape, row: i32, col: i32) -> bool {
        shape.cells.iter().all(|&(r, c)| {
            let (y, x) = (row + r as i32, col + c as i32);
            y >= 0 && x >= 0 && (y as usize) < self.rows && (x as usize) < self.cols && self.grid[y as usize][x as usize] == BLANK
        })
    }

    /// Places `kind` at the top centre, or `None` when it does not fit.
    pub fn spawn(&self, kind: PieceKind) -> Option<ActivePiece> {
        let shape = kind.shape();
        let col = ((self.cols - shape.width) / 2) as i32;
        self.fits(&shape, 0, col).then_some(ActivePiece { kind, rotation: 0, shape, row: 0, col })
    }

    pub fn column_heights(&self) -> Vec<u32> {
        (0..self.cols)
            .map(|c| (0..self.rows).find(|&r| self.grid[r][c] == LANDED).map_or(0, |r| (self.rows - r) as u32))
            .collect()
    }

    pub fn landed_cells(&self) -> usize {
        self.grid.iter().flatten().filter(|&&v| v == LANDED).count()
    }

    /// Text form used in the prompt, with the active piece drawn as `1`.
    pub fn render(&self, active: Option<&ActivePiece>) -> String {
        let mut g = self.grid.clone();
        if let Some(p) = active {
            for &(r, c) in &p.shape.cells {
                g[(p.row + r as i32) as usize][(p.col + c as i32) as usize] = ACTIVE;
            }
        }
        g.iter()
            .map(|row| row.iter().map(u8::to_string).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn lock(&mut self, piece: &ActivePiece) -> u32 {
        for &(r, c) in &piece.shape.cells {
            self.grid[(piece.row + r as i32) as usize][(piece.col + c as i32) as usize] = LANDED;
        }
        let before = self.grid.len();
        self.grid.retain(|row| row.iter().any(|&v| v == BLANK));
        let cleared = before - self.grid.len();
        for _ in 0..cleared {
            self.grid.insert(0, vec![BLANK; self.cols]);
        }
        let cleared = cleared as u32;
        self.lines_cleared += cleared;
        self.score += POINTS_PER_LINE * cleared;
        self.blocks_placed += 1;
        cleared
    }
}

pub fn board_metrics(board: &Board) -> BoardStats {
    let heights = board.column_heights();
    let mut holes = 0;
    for c in 0..board.cols {
        let mut seen = false;
        for r in 0..board.rows {
            match board.grid[r][c] {
                LANDED => seen = true,
                BLANK if seen => holes += 1,
                _ => {}
            }
        }
    }
    BoardStats {
        max_height: heights.iter().copied().max().unwrap_or(0),
        holes,
        bumpiness: heights.windows(2).map(|w| w[0].abs_diff(w[1])).sum(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PlanEvent {
    Blocked { mv: TetrisMove },
    /// Steps after the hard drop are ignored.
    Ignored { mv: TetrisMove },
    /// The plan had no drop, so the piece was dropped at the end.
    ImplicitDrop,
    GameOver,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanResult {
    pub board: Board,
    pub lines_cleared: u32,
    pub events: Vec<PlanEvent>,
    pub game_over: bool,
    /// Rotation count and left column where the piece landed.
    pub landed_at: Option<(u8, i32)>,
}

/// Spawns `piece` on a copy of `board`, executes the plan and locks the piece.
pub fn apply_plan(board: &Board, piece: PieceKind, plan: &ActionPlan) -> Result<PlanResult> {
    let ActionPlan::Tetris(steps) = plan else {
        return Err(Error::PlanParse("expected a Tetris move list".into()));
    };
    plan.validate()?;
    let mut out = board.clone();
    let mut events = Vec::new();
    let Some(mut p) = out.spawn(piece) else {
        events.push(PlanEvent::GameOver);
        return Ok(PlanResult { board: out, lines_cleared: 0, events, game_over: true, landed_at: None });
    };
    let mut dropped = false;
    for step in steps {
        if dropped {
            events.push(PlanEvent::Ignored { mv: step.mv });
            continue;
        }
        for _ in 0..step.times {
            match step.mv {
                TetrisMove::Left | TetrisMove::Right => {
                    let dc = if step.mv == TetrisMove::Left { -1 } else { 1 };
                    if out.fits(&p.shape, p.row, p.col + dc) {
                        p.col += dc;
                    } else {
                        events.push(PlanEvent::Blocked { mv: step.mv });
                    }
                }
                TetrisMove::Rotate => {
                    let turned = p.shape.rotated();
                    if out.fits(&turned, p.row, p.col) {
                        p.shape = turned;
                        p.rotation = (p.rotation + 1) % 4;
                    } else {
                        events.push(PlanEvent::Blocked { mv: step.mv });
                    }
                }
                TetrisMove::Down => {
                    while out.fits(&p.shape, p.row + 1, p.col) {
                        p.row += 1;
                    }
                    dropped = true;
                }
            }
        }
    }
    if !dropped {
        events.push(PlanEvent::ImplicitDrop);
        while out.fits(&p.shape, p.row + 1, p.col) {
            p.row += 1;
        }
    }
    let lines_cleared = out.lock(&p);
    Ok(PlanResult { board: out, lines_cleared, events, game_over: false, landed_at: Some((p.rotation, p.col)) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub rotation: u8,
    pub column: i32,
    pub shift: i32,
    pub descriptor: BoardDescriptor,
}

impl Placement {
    pub fn action(&self) -> CandidateAction {
        CandidateAction::Tetris { rotation: self.rotation, column: self.column, shift: self.shift }
    }
}

/// Plan that rotates at spawn, shifts, then hard drops.
pub fn placement_plan(rotation: u8, shift: i32) -> ActionPlan {
    apex_core::decision::plan_for(&CandidateAction::Tetris { rotation, column: 0, shift })
}

/// Every distinct rotation and column reachable from spawn, each simulated
/// on a copy of the board.
pub fn enumerate_placements(board: &Board, piece: PieceKind) -> Vec<Placement> {
    let Some(spawned) = board.spawn(piece) else {
        return Vec::new();
    };
    let mut seen: Vec<Shape> = Vec::new();
    let mut shape = piece.shape();
    let mut out = Vec::new();
    for rotation in 0..4u8 {
        if rotation > 0 {
            shape = shape.rotated();
        }
        if seen.contains(&shape) {
            continue;
        }
        seen.push(shape.clone());
        for column in 0..=(board.cols - shape.width) as i32 {
            let shift = column - spawned.col;
            let Ok(result) = apply_plan(board, piece, &placement_plan(rotation, shift)) else {
                continue;
            };
            if result.landed_at != Some((rotation, column)) || result.events.iter().any(|e| matches!(e, PlanEvent::Blocked { .. })) {
                continue;
            }
            let stats = board_metrics(&result.board);
            out.push(Placement {
                rotation,
                column,
                shift,
                descriptor: BoardDescriptor {
                    lines_cleared: result.lines_cleared,
                    holes: stats.holes,
                    bumpiness: stats.bumpiness,
                    max_height: stats.max_height,
                },
            });
        }
    }
    out
}

struct Placements<'a>(&'a [Placement]);

impl PlacementView for Placements<'_> {
    fn placements(&self) -> Vec<(u8, i32, i32)> {
        self.0.iter().map(|p| (p.rotation, p.column, p.shift)).collect()
    }
}

/// Rollout descriptors for every placement, in enumeration order.
pub fn placement_outcomes(placements: &[Placement]) -> Vec<RolloutOutcome> {
    let by_action: BTreeMap<(u8, i32), BoardDescriptor> = placements.iter().map(|p| ((p.rotation, p.column), p.descriptor)).collect();
    enumerate_actions(&EnvView::Tetris(&Placements(placements)))
        .into_iter()
        .map(|a| {
            let CandidateAction::Tetris { rotation, column, .. } = a else { unreachable!() };
            let d = by_action[&(rotation, column)];
            RolloutOutcome::placement(a, d)
        })
        .collect()
}

/// Endless 7-bag piece stream.
pub struct PieceBag {
    rng: ChaCha8Rng,
    queue: Vec<PieceKind>,
}

impl PieceBag {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), queue: Vec::new() }
    }
}

impl Iterator for PieceBag {
    type Item = PieceKind;

    fn next(&mut self) -> Option<PieceKind> {
        if self.queue.is_empty() {
            let mut bag = PieceKind::ALL.to_vec();
            bag.shuffle(&mut self.rng);
            bag.reverse();
            self.queue = bag;
        }
        self.queue.pop()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TetrisCaps {
    pub blocks: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Default for TetrisCaps {
    fn default() -> Self {
        Self { blocks: DEFAULT_BLOCKS, rows: DEFAULT_ROWS, cols: DEFAULT_COLS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TetrisMetrics {
    pub final_score: u32,
    /// Tallest column seen during the episode.
    pub max_height: u32,
    pub holes: u32,
    pub bumpiness: u32,
    /// Total height gained over the episode, starting from an empty board.
    pub height_delta_per_move: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetrisDecision {
    pub piece: PieceKind,
    pub raw_text: Option<String>,
    pub plan: Option<ActionPlan>,
    pub valid: bool,
    pub latency_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetrisEpisode {
    pub seed: u64,
    pub metrics: TetrisMetrics,
    pub blocks_placed: u32,
    pub lines_cleared: u32,
    pub topped_out: bool,
    pub failed: bool,
    pub failure: Option<String>,
    pub invalid_actions: u32,
    pub decisions: Vec<TetrisDecision>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub frames: Vec<String>,
}

/// Plays one seeded episode. Unparsable replies fall back to a hard drop
/// and count as invalid; a backend failure aborts the episode.
pub fn run_tetris_episode(backend: &mut dyn DecisionBackend, seed: u64, caps: &TetrisCaps, keep_frames: bool) -> TetrisEpisode {
    let mut board = Board::new(caps.rows, caps.cols);
    let mut bag = PieceBag::new(seed);
    let mut decisions = Vec::new();
    let mut frames = Vec::new();
    let (mut peak, mut invalid, mut topped_out) = (0u32, 0u32, false);
    let mut failure = None;

    for _ in 0..caps.blocks {
        let piece = bag.next().expect("bag is endless");
        let Some(active) = board.spawn(piece) else {
            topped_out = true;
            break;
        };
        let placements = enumerate_placements(&board, piece);
        if placements.is_empty() {
            topped_out = true;
            break;
        }
        let outcomes = placement_outcomes(&placements);
        let state = board.render(Some(&active));
        if keep_frames {
            frames.push(state.clone());
        }
        let ctx: BTreeMap<String, String> = [("state".to_string(), state)].into_iter().collect();
        let bundle = match assemble_prompt(TemplateId::Tetris, &ctx, "", &describe_outcomes(&outcomes)) {
            Ok(b) => b,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let d = decide(backend, &bundle, &outcomes);
        let (plan, valid) = match d.plan {
            Ok(p) => (p, true),
            Err(e @ (Error::Backend(_) | Error::BackendConfig(_))) => {
                failure = Some(e.to_string());
                decisions.push(TetrisDecision { piece, raw_text: d.raw_text, plan: None, valid: false, latency_s: d.latency_s });
                invalid += 1;
                break;
            }
            Err(_) => (ActionPlan::hard_drop(), false),
        };
        if !valid {
            invalid += 1;
        }
        decisions.push(TetrisDecision { piece, raw_text: d.raw_text, plan: Some(plan.clone()), valid, latency_s: d.latency_s });
        match apply_plan(&board, piece, &plan) {
            Ok(r) if !r.game_over => board = r.board,
            _ => {
                topped_out = true;
                break;
            }
        }
        peak = peak.max(board_metrics(&board).max_height);
    }

    let stats = board_metrics(&board);
    if keep_frames {
        frames.push(board.render(None));
    }
    TetrisEpisode {
        seed,
        metrics: TetrisMetrics {
            final_score: board.score,
            max_height: peak,
            holes: stats.holes,
            bumpiness: stats.bumpiness,
            height_delta_per_move: f64::from(stats.max_height),
        },
        blocks_placed: board.blocks_placed,
        lines_cleared: board.lines_cleared,
        topped_out,
        failed: failure.is_some(),
        failure,
        invalid_actions: invalid,
        decisions,
        frames,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetrisSummary {
    pub episodes: usize,
    pub final_score: f64,
    pub max_height: f64,
    pub holes: f64,
    pub bumpiness: f64,
    pub height_delta_per_move: f64,
    pub failures: usize,
    pub invalid_action_rate: f64,
    pub mean_latency_s: f64,
}

pub fn aggregate_tetris(episodes: &[TetrisEpisode]) -> Result<TetrisSummary> {
    if episodes.is_empty() {
        return Err(Error::InvalidInput("no episodes to aggregate".into()));
    }
    let n = episodes.len() as f64;
    let mean = |f: &dyn Fn(&TetrisEpisode) -> f64| episodes.iter().map(f).sum::<f64>() / n;
    let decisions: usize = episodes.iter().map(|e| e.decisions.len()).sum();
    let invalid: u32 = episodes.iter().map(|e| e.invalid_actions).sum();
    let latency: f64 = episodes.iter().flat_map(|e| e.decisions.iter().map(|d| d.latency_s)).sum();
    Ok(TetrisSummary {
        episodes: episodes.len(),
        final_score: mean(&|e| f64::from(e.metrics.final_score)),
        max_height: mean(&|e| f64::from(e.metrics.max_height)),
        holes: mean(&|e| f64::from(e.metrics.holes)),
        bumpiness: mean(&|e| f64::from(e.metrics.bumpiness)),
        height_delta_per_move: mean(&|e| e.metrics.height_delta_per_move),
        failures: episodes.iter().filter(|e| e.failed).count(),
        invalid_action_rate: if decisions == 0 { 0.0 } else { 100.0 * f64::from(invalid) / decisions as f64 },
        mean_latency_s: if decisions == 0 { 0.0 } else { latency / decisions as f64 },
    })
}

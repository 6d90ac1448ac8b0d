use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::plan::{ActionPlan, AvoidStep, TetrisMove, TetrisStep};
use super::prompt::TemplateId;
use crate::error::{Error, Result};
use crate::rollout::{BoardDescriptor, CandidateAction, RolloutOutcome};

/// Linear board evaluation weights: lines are rewarded, the rest penalized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TetrisWeights {
    pub lines: f64,
    pub holes: f64,
    pub bumpiness: f64,
    pub max_height: f64,
}

impl Default for TetrisWeights {
    fn default() -> Self {
        Self { lines: 0.76, holes: 0.36, bumpiness: 0.18, max_height: 0.51 }
    }
}

impl TetrisWeights {
    pub fn score(&self, b: &BoardDescriptor) -> f64 {
        self.lines * f64::from(b.lines_cleared)
            - self.holes * f64::from(b.holes)
            - self.bumpiness * f64::from(b.bumpiness)
            - self.max_height * f64::from(b.max_height)
    }
}

/// Move sequence that executes a candidate action.
pub fn plan_for(action: &CandidateAction) -> ActionPlan {
    match *action {
        CandidateAction::Avoid { direction, duration } => ActionPlan::Avoid(vec![AvoidStep { direction, duration }]),
        CandidateAction::Tetris { rotation, shift, .. } => {
            let mut steps = Vec::new();
            if rotation > 0 {
                steps.push(TetrisStep { mv: TetrisMove::Rotate, times: u32::from(rotation) });
            }
            match shift.cmp(&0) {
                Ordering::Less => steps.push(TetrisStep { mv: TetrisMove::Left, times: shift.unsigned_abs() }),
                Ordering::Greater => steps.push(TetrisStep { mv: TetrisMove::Right, times: shift.unsigned_abs() }),
                Ordering::Equal => {}
            }
            steps.push(TetrisStep { mv: TetrisMove::Down, times: 1 });
            ActionPlan::Tetris(steps)
        }
    }
}

/// Index of the first maximum under `better`, which returns `Greater` when
/// its first argument should win.
fn first_best<F>(outcomes: &[&RolloutOutcome], better: F) -> usize
where
    F: Fn(&RolloutOutcome, &RolloutOutcome) -> Ordering,
{
    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate().skip(1) {
        if better(o, outcomes[best]) == Ordering::Greater {
            best = i;
        }
    }
    best
}

fn avoid_rank(a: &RolloutOutcome, b: &RolloutOutcome) -> Ordering {
    a.min_obstacle_distance
        .total_cmp(&b.min_obstacle_distance)
        .then_with(|| match (a.target_distance, b.target_distance) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            _ => Ordering::Equal,
        })
}

/// Index chosen by the scripted oracle.
pub fn scripted_index(outcomes: &[RolloutOutcome], weights: &TetrisWeights) -> Result<usize> {
    if outcomes.is_empty() {
        return Err(Error::NoAction);
    }
    let all: Vec<(usize, &RolloutOutcome)> = outcomes.iter().enumerate().collect();
    let pool: Vec<(usize, &RolloutOutcome)> = match outcomes[0].board {
        Some(_) => all,
        None => {
            let safe: Vec<_> = all.iter().copied().filter(|(_, o)| o.safe).collect();
            if safe.is_empty() {
                all
            } else {
                safe
            }
        }
    };
    let refs: Vec<&RolloutOutcome> = pool.iter().map(|(_, o)| *o).collect();
    let best = match outcomes[0].board {
        Some(_) => first_best(&refs, |a, b| {
            let score = |o: &RolloutOutcome| o.board.map_or(f64::NEG_INFINITY, |bd| weights.score(&bd));
            score(a).total_cmp(&score(b))
        }),
        None => first_best(&refs, avoid_rank),
    };
    Ok(pool[best].0)
}

/// Max-clearance oracle for avoidance, weighted board score for Tetris.
pub fn scripted_decide(outcomes: &[RolloutOutcome], template_id: TemplateId) -> Result<ActionPlan> {
    scripted_decide_with(outcomes, template_id, &TetrisWeights::default())
}

pub fn scripted_decide_with(
    outcomes: &[RolloutOutcome],
    template_id: TemplateId,
    weights: &TetrisWeights,
) -> Result<ActionPlan> {
    check_template(template_id)?;
    let i = scripted_index(outcomes, weights)?;
    Ok(plan_for(&outcomes[i].action))
}

/// Index of the first outcome flagged safe, else 0.
pub fn first_safe_index(outcomes: &[RolloutOutcome]) -> Result<usize> {
    if outcomes.is_empty() {
        return Err(Error::NoAction);
    }
    Ok(outcomes.iter().position(|o| o.safe).unwrap_or(0))
}

/// Takes the first action labeled safe.
pub fn first_safe_decide(outcomes: &[RolloutOutcome], template_id: TemplateId) -> Result<ActionPlan> {
    check_template(template_id)?;
    let i = first_safe_index(outcomes)?;
    Ok(plan_for(&outcomes[i].action))
}

fn check_template(template_id: TemplateId) -> Result<()> {
    if template_id == TemplateId::Physqa {
        return Err(Error::invalid("policies decide actions, not question answers"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::Direction;
    use std::collections::BTreeMap;

    fn avoid(direction: Direction, safe: bool, dist: f64) -> RolloutOutcome {
        RolloutOutcome {
            action: CandidateAction::Avoid { direction, duration: 1.0 },
            collision: !safe,
            min_obstacle_distance: dist,
            target_distance: None,
            board: None,
            duration: 1.0,
            final_positions: BTreeMap::new(),
            safe,
        }
    }

    fn chosen(plan: ActionPlan) -> Direction {
        match plan {
            ActionPlan::Avoid(steps) => steps[0].direction,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scripted_skips_the_narrow_corridor() {
        let o = [avoid(Direction::W, true, 0.54), avoid(Direction::E, true, 2.30)];
        assert_eq!(chosen(scripted_decide(&o, TemplateId::Avoid).unwrap()), Direction::E);
        assert_eq!(chosen(first_safe_decide(&o, TemplateId::Avoid).unwrap()), Direction::W);
    }

    #[test]
    fn scripted_all_unsafe_takes_max() {
        let o = [avoid(Direction::W, false, 0.1), avoid(Direction::E, false, 0.4)];
        assert_eq!(chosen(scripted_decide(&o, TemplateId::Avoid).unwrap()), Direction::E);
    }

    #[test]
    fn scripted_prefers_safe_over_farther_unsafe() {
        let o = [avoid(Direction::W, false, 3.0), avoid(Direction::E, true, 0.6)];
        assert_eq!(chosen(scripted_decide(&o, TemplateId::Avoid).unwrap()), Direction::E);
    }

    #[test]
    fn scripted_ties_use_target_then_order() {
        let mut a = avoid(Direction::W, true, 1.0);
        let mut b = avoid(Direction::E, true, 1.0);
        assert_eq!(chosen(scripted_decide(&[a.clone(), b.clone()], TemplateId::Avoid).unwrap()), Direction::W);
        a.target_distance = Some(3.0);
        b.target_distance = Some(2.0);
        assert_eq!(chosen(scripted_decide(&[a, b], TemplateId::Avoid).unwrap()), Direction::E);
    }

    #[test]
    fn singleton() {
        let o = [avoid(Direction::N, false, 0.0)];
        assert_eq!(chosen(scripted_decide(&o, TemplateId::Avoid).unwrap()), Direction::N);
    }

    #[test]
    fn first_safe_fallbacks() {
        let o = [avoid(Direction::W, false, 0.1), avoid(Direction::E, true, 0.2)];
        assert_eq!(chosen(first_safe_decide(&o, TemplateId::Avoid).unwrap()), Direction::E);
        let o = [avoid(Direction::W, false, 0.1), avoid(Direction::E, false, 0.2)];
        assert_eq!(chosen(first_safe_decide(&o, TemplateId::Avoid).unwrap()), Direction::W);
    }

    #[test]
    fn empty_is_no_action() {
        assert!(matches!(scripted_decide(&[], TemplateId::Avoid), Err(Error::NoAction)));
        assert!(matches!(first_safe_decide(&[], TemplateId::Tetris), Err(Error::NoAction)));
    }

    #[test]
    fn tetris_plan_realizes_placement() {
        let board = |lines, holes, bumpiness, max_height| BoardDescriptor { lines_cleared: lines, holes, bumpiness, max_height };
        let o = [
            RolloutOutcome::placement(CandidateAction::Tetris { rotation: 0, column: 3, shift: 0 }, board(0, 2, 3, 4)),
            RolloutOutcome::placement(CandidateAction::Tetris { rotation: 1, column: 0, shift: -3 }, board(1, 0, 2, 2)),
        ];
        let plan = scripted_decide(&o, TemplateId::Tetris).unwrap();
        assert_eq!(
            plan,
            ActionPlan::Tetris(vec![
                TetrisStep { mv: TetrisMove::Rotate, times: 1 },
                TetrisStep { mv: TetrisMove::Left, times: 3 },
                TetrisStep { mv: TetrisMove::Down, times: 1 },
            ])
        );
        assert_eq!(plan_for(&o[0].action), ActionPlan::hard_drop());
    }
}

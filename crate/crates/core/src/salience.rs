//! Trigger stage: edge scoring, top-k selection and the scene summary.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::scenegraph::{DiffGraph, EdgeKey, ObjectState, WorldState};
use crate::vec3::Vec3;

/// Floor coefficient for non-approaching pairs.
pub const DEFAULT_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SalienceScore<T> {
    pub edge: EdgeKey,
    pub score: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    AnalyticTtc,
    Pluggable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"), default, deny_unknown_fields)]
pub struct SalienceConfig<T> {
    pub k: usize,
    pub scorer: ScorerKind,
    /// Score coefficient for receding pairs: `epsilon / (1 + distance)`.
    pub epsilon: T,
}

impl<T: Scalar> Default for SalienceConfig<T> {
    fn default() -> Self {
        Self { k: 2, scorer: ScorerKind::AnalyticTtc, epsilon: T::lit(DEFAULT_FLOOR) }
    }
}

impl<T: Scalar> SalienceConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("salience k must be >= 1"));
        }
        if !(self.epsilon > T::zero()) {
            return Err(Error::invalid("salience epsilon must be > 0"));
        }
        Ok(())
    }
}

/// Edge scoring strategy. Learned graph models plug in here.
pub trait EdgeScorer<T: Scalar>: Send + Sync {
    fn score(&self, diff: &DiffGraph<T>, world: &WorldState<T>) -> Vec<SalienceScore<T>>;
}

/// Linear relative-motion closest approach between two bodies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestApproach<T> {
    /// Time until closest approach; `None` when the pair is not closing.
    pub time: Option<T>,
    /// Center distance at closest approach (current distance if not closing).
    pub min_distance: T,
    pub current_distance: T,
}

pub fn closest_approach<T: Scalar>(dp: Vec3<T>, dv: Vec3<T>) -> ClosestApproach<T> {
    let current = dp.norm();
    let speed_sq = dv.norm_squared();
    let dot = dp.dot(dv);
    if speed_sq > T::zero() && dot < T::zero() {
        let t = -dot / speed_sq;
        ClosestApproach { time: Some(t), min_distance: (dp + dv * t).norm(), current_distance: current }
    } else {
        ClosestApproach { time: None, min_distance: current, current_distance: current }
    }
}

fn pair_approach<T: Scalar>(a: &ObjectState<T>, b: &ObjectState<T>) -> ClosestApproach<T> {
    closest_approach(b.position - a.position, b.velocity - a.velocity)
}

/// Deterministic default: inverse time-to-closest-approach.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticTtcScorer<T> {
    pub floor: T,
}

impl<T: Scalar> EdgeScorer<T> for AnalyticTtcScorer<T> {
    fn score(&self, diff: &DiffGraph<T>, world: &WorldState<T>) -> Vec<SalienceScore<T>> {
        diff.edges
            .iter()
            .filter_map(|e| {
                let a = world.get(&e.key.a)?;
                let b = world.get(&e.key.b)?;
                let ca = pair_approach(a, b);
                let raw = match ca.time {
                    Some(t) => T::one() / (T::one() + t),
                    None => self.floor / (T::one() + ca.current_distance),
                };
                let score = if raw.is_finite() { raw.max(T::zero()).min(T::one()) } else { T::zero() };
                Some(SalienceScore { edge: e.key.clone(), score })
            })
            .collect()
    }
}

pub fn score_edges<T: Scalar>(diff: &DiffGraph<T>, world: &WorldState<T>, cfg: &SalienceConfig<T>) -> Vec<SalienceScore<T>> {
    AnalyticTtcScorer { floor: cfg.epsilon }.score(diff, world)
}

/// Scores with an external scorer, clamping its output into [0, 1].
pub fn score_edges_with<T: Scalar>(
    scorer: &dyn EdgeScorer<T>,
    diff: &DiffGraph<T>,
    world: &WorldState<T>,
) -> Vec<SalienceScore<T>> {
    scorer
        .score(diff, world)
        .into_iter()
        .map(|mut s| {
            s.score = if s.score.is_finite() { s.score.max(T::zero()).min(T::one()) } else { T::zero() };
            s
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SalientSubgraph<T> {
    /// Ranked by descending score.
    pub edges: Vec<SalienceScore<T>>,
}

/// Highest `k` scores; ties go to the lexicographically smaller pair.
pub fn select_top_k<T: Scalar>(scores: &[SalienceScore<T>], k: usize) -> Result<SalientSubgraph<T>> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let mut ranked = scores.to_vec();
    ranked.sort_by(|l, r| {
        r.score
            .partial_cmp(&l.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| l.edge.cmp(&r.edge))
    });
    ranked.truncate(k);
    Ok(SalientSubgraph { edges: ranked })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SummaryEntry<T> {
    pub edge: EdgeKey,
    /// Seconds until closest approach; 0 for receding pairs.
    pub time_to_closest: T,
    /// Center distance at closest approach, m.
    pub min_distance: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct SceneSummary<T> {
    pub text: String,
    pub structured: Vec<SummaryEntry<T>>,
}

pub const EMPTY_SUMMARY: &str = "No salient interactions detected.";

pub fn summarize<T: Scalar>(sub: &SalientSubgraph<T>, world: &WorldState<T>, agent_id: Option<&str>) -> SceneSummary<T> {
    let mut lines = Vec::new();
    let mut structured = Vec::new();

    for s in &sub.edges {
        let (Some(a), Some(b)) = (world.get(&s.edge.a), world.get(&s.edge.b)) else {
            continue;
        };
        let ca = pair_approach(a, b);
        let mut line = match ca.time {
            Some(t) if ca.min_distance <= a.radius + b.radius => format!(
                "Object {} is on a collision course with object {}: closest approach {:.2} m in {:.2} s.",
                a.id,
                b.id,
                ca.min_distance.as_f64(),
                t.as_f64()
            ),
            Some(t) => format!(
                "Object {} is approaching object {}: closest approach {:.2} m in {:.2} s.",
                a.id,
                b.id,
                ca.min_distance.as_f64(),
                t.as_f64()
            ),
            None => format!(
                "Object {} and object {} are moving apart: current distance {:.2} m.",
                a.id,
                b.id,
                ca.current_distance.as_f64()
            ),
        };
        if agent_id.is_some_and(|id| s.edge.contains(id)) {
            line.push_str(" This involves the agent.");
        }
        lines.push(line);
        structured.push(SummaryEntry {
            edge: s.edge.clone(),
            time_to_closest: ca.time.unwrap_or_else(T::zero),
            min_distance: ca.min_distance,
        });
    }

    let text = if lines.is_empty() { EMPTY_SUMMARY.to_owned() } else { lines.join("\n") };
    SceneSummary { text, structured }
}

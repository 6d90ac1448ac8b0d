use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::prompt::TemplateId;
use crate::error::{Error, Result};
use crate::rollout::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TetrisMove {
    Left,
    Right,
    Rotate,
    Down,
}

impl TetrisMove {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" => Some(Self::Left),
            "right" => Some(Self::Right),
            "rotate" => Some(Self::Rotate),
            "down" => Some(Self::Down),
            _ => None,
        }
    }
}

impl fmt::Display for TetrisMove {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Left => "left",
            Self::Right => "right",
            Self::Rotate => "rotate",
            Self::Down => "down",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TetrisStep {
    #[serde(rename = "move")]
    pub mv: TetrisMove,
    pub times: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AvoidStep {
    #[serde(rename = "move")]
    pub direction: Direction,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", content = "steps", rename_all = "snake_case")]
pub enum ActionPlan {
    Tetris(Vec<TetrisStep>),
    Avoid(Vec<AvoidStep>),
}

impl ActionPlan {
    pub fn stay(duration: f64) -> Self {
        ActionPlan::Avoid(vec![AvoidStep { direction: Direction::Stay, duration }])
    }

    pub fn hard_drop() -> Self {
        ActionPlan::Tetris(vec![TetrisStep { mv: TetrisMove::Down, times: 1 }])
    }

    /// Wire form a model would answer with.
    pub fn to_json(&self) -> String {
        match self {
            ActionPlan::Tetris(steps) => serde_json::to_string(steps),
            ActionPlan::Avoid(steps) if steps.len() == 1 => serde_json::to_string(&steps[0]),
            ActionPlan::Avoid(steps) => serde_json::to_string(steps),
        }
        .expect("plan serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ActionPlan::Tetris(steps) => {
                if steps.is_empty() {
                    return Err(Error::PlanParse("empty move list".into()));
                }
                if steps.iter().any(|s| s.times == 0) {
                    return Err(Error::PlanParse("times must be >= 1".into()));
                }
                let downs: Vec<_> = steps.iter().filter(|s| s.mv == TetrisMove::Down).collect();
                if downs.len() > 1 || downs.iter().any(|s| s.times != 1) {
                    return Err(Error::PlanParse("at most one down with times = 1".into()));
                }
            }
            ActionPlan::Avoid(steps) => {
                if steps.is_empty() {
                    return Err(Error::PlanParse("empty move list".into()));
                }
                if steps.iter().any(|s| !(s.duration > 0.0 && s.duration.is_finite())) {
                    return Err(Error::PlanParse("duration must be > 0".into()));
                }
            }
        }
        Ok(())
    }
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(body) = t.strip_prefix("```") else {
        return t;
    };
    let body = match body.find('\n') {
        Some(i) => &body[i + 1..],
        None => body,
    };
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

fn trailing_commas() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r",(\s*[}\]])").expect("valid regex"))
}

/// Parses a JSON reply, tolerating code fences and trailing commas.
pub fn parse_reply_json(text: &str) -> Result<Value> {
    let body = strip_fences(text);
    serde_json::from_str(body)
        .or_else(|_| serde_json::from_str(&trailing_commas().replace_all(body, "$1")))
        .map_err(|e| Error::PlanParse(e.to_string()))
}

fn field<'a>(obj: &'a Value, name: &str) -> Result<&'a Value> {
    obj.get(name).ok_or_else(|| Error::PlanParse(format!("missing `{name}`")))
}

fn move_label(obj: &Value) -> Result<&str> {
    field(obj, "move")?
        .as_str()
        .ok_or_else(|| Error::PlanParse("`move` must be a string".into()))
}

fn as_steps(v: Value) -> Vec<Value> {
    match v {
        Value::Array(items) => items,
        other => vec![other],
    }
}

/// Parses a model reply into a validated plan.
pub fn parse_action_plan(text: &str, template_id: TemplateId) -> Result<ActionPlan> {
    let value = parse_reply_json(text)?;
    let plan = match template_id {
        TemplateId::Tetris => {
            let steps = as_steps(value)
                .iter()
                .map(|s| {
                    let label = move_label(s)?;
                    let mv = TetrisMove::parse(label).ok_or_else(|| Error::Vocabulary(label.to_owned()))?;
                    let times = match s.get("times") {
                        None => 1,
                        Some(t) => t
                            .as_u64()
                            .and_then(|n| u32::try_from(n).ok())
                            .ok_or_else(|| Error::PlanParse("`times` must be a positive integer".into()))?,
                    };
                    Ok(TetrisStep { mv, times })
                })
                .collect::<Result<Vec<_>>>()?;
            ActionPlan::Tetris(steps)
        }
        TemplateId::Avoid => {
            let steps = as_steps(value)
                .iter()
                .map(|s| {
                    let label = move_label(s)?;
                    let direction = Direction::parse(label).ok_or_else(|| Error::Vocabulary(label.to_owned()))?;
                    let duration = field(s, "duration")?
                        .as_f64()
                        .ok_or_else(|| Error::PlanParse("`duration` must be a number".into()))?;
                    Ok(AvoidStep { direction, duration })
                })
                .collect::<Result<Vec<_>>>()?;
            ActionPlan::Avoid(steps)
        }
        TemplateId::Physqa => return Err(Error::PlanParse("question answers are not action plans".into())),
    };
    plan.validate()?;
    Ok(plan)
}

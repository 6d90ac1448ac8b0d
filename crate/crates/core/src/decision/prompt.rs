use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Physqa,
    Tetris,
    Avoid,
}

impl TemplateId {
    pub fn system(self) -> &'static str {
        match self {
            TemplateId::Physqa => "You are a physics expert.",
            TemplateId::Tetris => "You are a Tetris AI agent.",
            TemplateId::Avoid => "You are an AI robot that avoids dynamic obstacles.",
        }
    }

    /// Template source in format-string syntax: `{name}` is a slot,
    /// `{{` and `}}` are literal braces.
    pub fn source(self) -> &'static str {
        match self {
            TemplateId::Physqa => include_str!("templates/physqa.txt"),
            TemplateId::Tetris => include_str!("templates/tetris.txt"),
            TemplateId::Avoid => include_str!("templates/avoid.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_id: TemplateId,
    pub system: String,
    pub user: String,
}

/// Context key a template slot reads from.
fn slot_key(slot: &str) -> &str {
    match slot {
        r#"q["question"]"# => "question",
        "str(q['answer_json'])" => "answer_json",
        "APEX_results" | "ref" => "apex_results",
        other => other,
    }
}

fn unresolved_slot() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{[A-Za-z_][A-Za-z0-9_]*\}").expect("valid regex"))
}

/// Substitutes every slot of `source` from `values`.
pub fn render(source: &str, values: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(source.len() + 256);
    let mut rest = source;
    while let Some(i) = rest.find(['{', '}']) {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if tail.starts_with("{{") {
            out.push('{');
            rest = &tail[2..];
        } else if tail.starts_with("}}") {
            out.push('}');
            rest = &tail[2..];
        } else if tail.starts_with('{') {
            let end = tail.find('}').ok_or_else(|| Error::Template { placeholder: tail.to_owned() })?;
            let slot = &tail[1..end];
            let value = values
                .get(slot_key(slot))
                .ok_or_else(|| Error::Template { placeholder: slot.to_owned() })?;
            out.push_str(value);
            rest = &tail[end + 1..];
        } else {
            out.push('}');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// Builds the enriched prompt: base context plus scene summary plus rollout
/// descriptors.
///
/// `base_context` supplies task-specific slots (`state`, `question`,
/// `answer_json`, `available_move`); `summary` and `outcomes_text` fill the
/// summary and engine-analysis slots.
pub fn assemble_prompt(
    template_id: TemplateId,
    base_context: &BTreeMap<String, String>,
    summary: &str,
    outcomes_text: &str,
) -> Result<PromptBundle> {
    let mut values = base_context.clone();
    values.insert("summary".into(), summary.to_owned());
    values.insert("apex_results".into(), outcomes_text.to_owned());
    let user = render(template_id.source(), &values)?;
    if let Some(m) = unresolved_slot().find(&user) {
        return Err(Error::Template { placeholder: m.as_str().trim_matches(['{', '}']).to_owned() });
    }
    Ok(PromptBundle { template_id, system: template_id.system().to_owned(), user })
}

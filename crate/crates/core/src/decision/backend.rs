use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::plan::{parse_action_plan, ActionPlan};
use super::policy::{first_safe_decide, scripted_decide_with, TetrisWeights};
use super::prompt::PromptBundle;
use super::remote::RemoteClient;
use crate::error::{Error, Result};
use crate::rollout::RolloutOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Scripted,
    FirstSafe,
    /// Replies with the same text every time.
    Fixed,
    Remote,
}

impl BackendKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "scripted" => Some(Self::Scripted),
            "first_safe" => Some(Self::FirstSafe),
            "fixed" => Some(Self::Fixed),
            "remote" => Some(Self::Remote),
            _ => None,
        }
    }
}

fn default_timeout() -> f64 {
    30.0
}

fn default_retries() -> u32 {
    2
}

fn default_backoff() -> u64 {
    250
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<TetrisWeights>,
}

impl BackendConfig {
    pub fn of_kind(kind: BackendKind) -> Self {
        Self {
            kind,
            base_url: None,
            model: None,
            timeout_s: default_timeout(),
            retries: default_retries(),
            backoff_ms: default_backoff(),
            response: None,
            weights: None,
        }
    }

    pub fn scripted() -> Self {
        Self::of_kind(BackendKind::Scripted)
    }

    pub fn first_safe() -> Self {
        Self::of_kind(BackendKind::FirstSafe)
    }

    pub fn fixed(response: impl Into<String>) -> Self {
        Self { response: Some(response.into()), ..Self::of_kind(BackendKind::Fixed) }
    }

    pub fn remote(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self { base_url: Some(base_url.into()), model: Some(model.into()), ..Self::of_kind(BackendKind::Remote) }
    }

    pub fn validate(&self) -> Result<()> {
        let remote = self.kind == BackendKind::Remote;
        if remote != self.base_url.is_some() || remote != self.model.is_some() {
            return Err(Error::BackendConfig("base_url and model are required exactly when kind = remote".into()));
        }
        if (self.kind == BackendKind::Fixed) != self.response.is_some() {
            return Err(Error::BackendConfig("response is required exactly when kind = fixed".into()));
        }
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(Error::BackendConfig("timeout_s must be > 0".into()));
        }
        Ok(())
    }
}

/// Something that answers an assembled prompt with raw text.
pub trait DecisionBackend: Send {
    fn kind(&self) -> BackendKind;

    fn respond(&mut self, bundle: &PromptBundle, outcomes: &[RolloutOutcome]) -> Result<String>;
}

/// One decision: verbatim reply, its parse, and wall-clock latency.
#[derive(Debug)]
pub struct Decision {
    pub raw_text: Option<String>,
    pub plan: Result<ActionPlan>,
    pub latency_s: f64,
}

pub fn decide(backend: &mut dyn DecisionBackend, bundle: &PromptBundle, outcomes: &[RolloutOutcome]) -> Decision {
    let start = Instant::now();
    let reply = backend.respond(bundle, outcomes);
    let latency_s = start.elapsed().as_secs_f64();
    match reply {
        Ok(text) => {
            let plan = parse_action_plan(&text, bundle.template_id);
            Decision { raw_text: Some(text), plan, latency_s }
        }
        Err(e) => Decision { raw_text: None, plan: Err(e), latency_s },
    }
}

struct Scripted(TetrisWeights);

impl DecisionBackend for Scripted {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn respond(&mut self, bundle: &PromptBundle, outcomes: &[RolloutOutcome]) -> Result<String> {
        Ok(scripted_decide_with(outcomes, bundle.template_id, &self.0)?.to_json())
    }
}

struct FirstSafe;

impl DecisionBackend for FirstSafe {
    fn kind(&self) -> BackendKind {
        BackendKind::FirstSafe
    }

    fn respond(&mut self, bundle: &PromptBundle, outcomes: &[RolloutOutcome]) -> Result<String> {
        Ok(first_safe_decide(outcomes, bundle.template_id)?.to_json())
    }
}

struct Fixed(String);

impl DecisionBackend for Fixed {
    fn kind(&self) -> BackendKind {
        BackendKind::Fixed
    }

    fn respond(&mut self, _: &PromptBundle, _: &[RolloutOutcome]) -> Result<String> {
        Ok(self.0.clone())
    }
}

impl DecisionBackend for RemoteClient {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn respond(&mut self, bundle: &PromptBundle, _: &[RolloutOutcome]) -> Result<String> {
        Ok(self.chat(bundle)?.text)
    }
}

pub fn make_backend(cfg: &BackendConfig) -> Result<Box<dyn DecisionBackend>> {
    cfg.validate()?;
    Ok(match cfg.kind {
        BackendKind::Scripted => Box::new(Scripted(cfg.weights.unwrap_or_default())),
        BackendKind::FirstSafe => Box::new(FirstSafe),
        BackendKind::Fixed => Box::new(Fixed(cfg.response.clone().unwrap_or_default())),
        BackendKind::Remote => Box::new(RemoteClient::new(cfg)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn remote_fields_iff_remote() {
        assert!(BackendConfig::scripted().validate().is_ok());
        assert!(BackendConfig::remote("http://x", "m").validate().is_ok());
        let mut c = BackendConfig::scripted();
        c.model = Some("m".into());
        assert!(matches!(c.validate(), Err(Error::BackendConfig(_))));
        let mut c = BackendConfig::remote("http://x", "m");
        c.model = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_json_shape() {
        let c: BackendConfig = serde_json::from_str(r#"{"kind":"remote","base_url":"http://h","model":"m","timeout_s":5,"retries":1}"#).unwrap();
        assert_eq!(c.retries, 1);
        assert_eq!(c.backoff_ms, 250);
        assert!(serde_json::from_str::<BackendConfig>(r#"{"kind":"scripted","bogus":1}"#).is_err());
    }
}

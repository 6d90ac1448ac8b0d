use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::backend::{BackendConfig, BackendKind};
use super::prompt::PromptBundle;
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "MODEL_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteReply {
    pub text: String,
    pub latency_s: f64,
    pub attempts: u32,
}

/// Blocking client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug)]
pub struct RemoteClient {
    http: reqwest::blocking::Client,
    url: String,
    model: String,
    api_key: String,
    retries: u32,
    backoff: Duration,
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

impl RemoteClient {
    /// Reads the API key from the environment; no network traffic happens here.
    pub fn new(cfg: &BackendConfig) -> Result<Self> {
        if cfg.kind != BackendKind::Remote {
            return Err(Error::BackendConfig("remote client needs kind = remote".into()));
        }
        cfg.validate()?;
        let api_key = std::env::var(API_KEY_ENV)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| Error::BackendConfig(format!("{API_KEY_ENV} is not set")))?;
        let base = cfg.base_url.as_deref().unwrap_or_default().trim_end_matches('/');
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .map_err(|e| Error::BackendConfig(e.to_string()))?;
        Ok(Self {
            http,
            url: format!("{base}/chat/completions"),
            model: cfg.model.clone().unwrap_or_default(),
            api_key,
            retries: cfg.retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<String, Failure> {
        let resp = self
            .http
            .post(&self.url)
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Failure::Retryable(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(Failure::Fatal(format!("HTTP {status}")));
        }
        let v: serde_json::Value = resp.json().map_err(|e| Failure::Retryable(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_owned)
            .ok_or_else(|| Failure::Fatal("response has no choices[0].message.content".into()))
    }

    /// Sends the system and user messages and returns the assistant text.
    pub fn chat(&self, bundle: &PromptBundle) -> Result<RemoteReply> {
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                {"role": "system", "content": bundle.system},
                {"role": "user", "content": bundle.user},
            ],
        });
        let start = Instant::now();
        let mut last = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(RemoteReply { text, latency_s: start.elapsed().as_secs_f64(), attempts: attempt + 1 });
                }
                Err(Failure::Fatal(msg)) => return Err(Error::Backend(msg)),
                Err(Failure::Retryable(msg)) => last = msg,
            }
        }
        Err(Error::Backend(format!("gave up after {} attempts: {last}", self.retries + 1)))
    }
}

pub fn remote_decide(bundle: &PromptBundle, cfg: &BackendConfig) -> Result<RemoteReply> {
    RemoteClient::new(cfg)?.chat(bundle)
}

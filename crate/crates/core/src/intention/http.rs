//! Chat-completion backend over HTTP.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{parse_output, AnswerBackend, ModelOutput, OracleRecord, PromptBundle};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub url: String,
    pub model: String,
    pub temperature: f64,
    /// Environment variable holding the API key; no key header if unset.
    pub api_key_env: Option<String>,
    pub api_key_header: String,
    /// Prepended to the key, e.g. `"Bearer "`.
    pub api_key_prefix: String,
    pub timeout_ms: u64,
    /// Extra attempts after a transport failure or 5xx reply.
    pub retries: u32,
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            url: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "aad-llm".into(),
            temperature: 0.0,
            api_key_env: None,
            api_key_header: "Authorization".into(),
            api_key_prefix: "Bearer ".into(),
            timeout_ms: 30_000,
            retries: 2,
            max_in_flight: 4,
        }
    }
}

/// Counting semaphore bounding requests in flight.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    cfg: BackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
    slots: Slots,
}

impl HttpBackend {
    pub fn new(cfg: BackendConfig) -> Result<Self> {
        if cfg.url.is_empty() {
            return Err(invalid("backend URL is empty"));
        }
        let api_key = match &cfg.api_key_env {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| invalid(format!("environment variable {var} is not set")))?)
            }
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = Slots::new(cfg.max_in_flight);
        Ok(Self { cfg, api_key, agent, slots })
    }

    pub fn request_body(&self, bundle: &PromptBundle) -> Value {
        json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
            "temperature": self.cfg.temperature,
        })
    }

    fn attempt(&self, body: &Value) -> Result<String> {
        let mut req = self.agent.post(&self.cfg.url);
        if let Some(key) = &self.api_key {
            req = req.header(self.cfg.api_key_header.as_str(), format!("{}{key}", self.cfg.api_key_prefix));
        }
        let mut resp = req.send_json(body).map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| Error::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(Error::Endpoint { status, body: text });
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Protocol(format!("reply is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(String::from)
            .ok_or_else(|| Error::Protocol("reply lacks choices[0].message.content".into()))
    }

    /// Sends the prompt and returns the raw reply text.
    pub fn complete(&self, bundle: &PromptBundle) -> Result<String> {
        let body = self.request_body(bundle);
        let _permit = self.slots.acquire();
        let mut last = None;
        for attempt in 0..=self.cfg.retries {
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    let retryable = matches!(e, Error::Transport(_))
                        || matches!(e, Error::Endpoint { status, .. } if status >= 500);
                    log::warn!("attempt {} to {} failed: {e}", attempt + 1, self.cfg.url);
                    if !retryable {
                        return Err(e);
                    }
                    last = Some(e);
                }
            }
        }
        Err(last.unwrap_or_else(|| Error::Transport("no attempt made".into())))
    }
}

impl AnswerBackend for HttpBackend {
    fn respond(&self, bundle: &PromptBundle, _oracle: &OracleRecord<'_>) -> Result<ModelOutput> {
        Ok(parse_output(&self.complete(bundle)?, bundle.k))
    }
}

//! Chat-completions client for running against real endpoints.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{whitespace_tokens, Backend, NodeRequest, NodeResponse};
use crate::error::ExecutionError;

/// Environment variable holding the bearer token.
pub const API_KEY_ENV: &str = "MAS_BUDGET_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    /// Backbone id to served model name; unmapped ids are sent as is.
    #[serde(default)]
    pub models: BTreeMap<String, String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            models: BTreeMap::new(),
            timeout_secs: default_timeout(),
            max_attempts: default_attempts(),
            backoff_ms: default_backoff(),
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .build()
            .into();
        Self { config, api_key, agent }
    }

    /// Reads the credential from [`API_KEY_ENV`].
    pub fn from_env(config: RemoteConfig) -> Self {
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::new(config, key)
    }

    fn request_once(&self, model: &str, prompt: &str) -> Result<Value, String> {
        let body = json!({
            "model": model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| e.to_string())?;
        resp.body_mut().read_json::<Value>().map_err(|e| e.to_string())
    }

    /// One completion with retries. Returns usage, text, wall latency and
    /// whether usage had to be estimated.
    pub fn complete_prompt(&self, backbone_id: &str, prompt: &str) -> Result<NodeResponse, ExecutionError> {
        let model = self.config.models.get(backbone_id).map_or(backbone_id, String::as_str);
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            let t0 = Instant::now();
            match self.request_once(model, prompt).and_then(|v| parse_completion(&v, prompt)) {
                Ok((tokens_in, tokens_out, text, estimated)) => {
                    if attempt > 1 {
                        log::info!("{backbone_id}: succeeded after {} retries", attempt - 1);
                    }
                    if estimated {
                        log::warn!("{backbone_id}: response lacks usage metadata, counting whitespace tokens");
                    }
                    return Ok(NodeResponse {
                        tokens_in,
                        tokens_out,
                        text,
                        latency: t0.elapsed().as_secs_f64(),
                        usage_estimated: estimated,
                        attempts: attempt,
                    });
                }
                Err(e) => {
                    log::warn!("{backbone_id}: attempt {attempt}/{attempts} failed: {e}");
                    last = e;
                    if attempt < attempts {
                        std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1)));
                    }
                }
            }
        }
        Err(ExecutionError::Remote { attempts, message: last })
    }
}

fn parse_completion(v: &Value, prompt: &str) -> Result<(u64, u64, String, bool), String> {
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| "response has no choices[0].message.content".to_string())?
        .to_string();
    let usage = (
        v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    );
    Ok(match usage {
        (Some(i), Some(o)) => (i, o, text, false),
        _ => (whitespace_tokens(prompt), whitespace_tokens(&text), text, true),
    })
}

impl Backend for RemoteBackend {
    fn complete(&self, req: &NodeRequest<'_>) -> Result<NodeResponse, ExecutionError> {
        self.complete_prompt(req.backbone_id, req.prompt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_fallback_counts_words() {
        let v = json!({"choices": [{"message": {"content": "a b c"}}]});
        assert_eq!(parse_completion(&v, "x y").unwrap(), (2, 3, "a b c".into(), true));
        let v = json!({"choices": [{"message": {"content": "ok"}}], "usage": {"prompt_tokens": 9, "completion_tokens": 4}});
        assert_eq!(parse_completion(&v, "x").unwrap(), (9, 4, "ok".into(), false));
        assert!(parse_completion(&json!({}), "x").is_err());
    }
}

// SPDX-License-Identifier: Apache-2.0

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    pub base_url: String,
    /// Environment variable holding the bearer token. No header is sent when unset.
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub model: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_base_secs: f64,
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> f64 {
    1.0
}

impl Endpoint {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key_env: None,
            model: model.into(),
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            backoff_base_secs: default_backoff(),
        }
    }

    pub fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url.trim_end_matches('/'))
    }

    fn check(&self) -> Result<()> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(Error::Config(format!("timeout must be positive, got {}", self.timeout_secs)));
        }
        if !(self.backoff_base_secs.is_finite() && self.backoff_base_secs >= 0.0) {
            return Err(Error::Config(format!("backoff base must be non-negative, got {}", self.backoff_base_secs)));
        }
        if self.model.is_empty() {
            return Err(Error::Config("endpoint model name is empty".into()));
        }
        Ok(())
    }

    /// Delay before retry number `attempt` (0-based): `backoff_base · 2^attempt`.
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_secs_f64(self.backoff_base_secs * 2f64.powi(attempt.min(30) as i32))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Requests sent, including the successful one.
    pub attempts: u32,
}

#[derive(Serialize)]
struct TranscriptEntry<'a> {
    timestamp: u128,
    request: &'a Value,
    response: Value,
    attempt_count: u32,
}

/// Append-only JSON-lines log of every exchange. Whole lines are written
/// under a lock, so concurrent callers never interleave.
pub struct Transcript {
    file: Mutex<File>,
}

impl Transcript {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file: Mutex::new(file) })
    }

    fn append(&self, request: &Value, response: Value, attempt_count: u32) -> Result<()> {
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
        let mut line = serde_json::to_string(&TranscriptEntry { timestamp, request, response, attempt_count })?;
        line.push('\n');
        let mut f = self.file.lock().unwrap_or_else(|p| p.into_inner());
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

pub struct LlmClient {
    endpoint: Endpoint,
    agent: ureq::Agent,
    api_key: Option<String>,
    system_prompt: Option<String>,
    transcript: Option<Transcript>,
}

enum Attempt {
    Done(String),
    Retry(String),
}

impl LlmClient {
    pub fn new(endpoint: Endpoint) -> Result<Self> {
        endpoint.check()?;
        let api_key = match &endpoint.api_key_env {
            Some(var) => Some(
                std::env::var(var).map_err(|_| Error::Config(format!("environment variable `{var}` is not set")))?,
            ),
            None => None,
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { endpoint, agent, api_key, system_prompt: None, transcript: None })
    }

    pub fn with_transcript(mut self, transcript: Transcript) -> Self {
        self.transcript = Some(transcript);
        self
    }

    /// Sent ahead of every user message. Off by default.
    pub fn with_system_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = Some(prompt.into());
        self
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// One user turn, preceded by the system prompt when configured.
    pub fn ask(&self, prompt: &str, temperature: f64, max_tokens: u32) -> Result<Completion> {
        let mut messages = Vec::with_capacity(2);
        if let Some(s) = &self.system_prompt {
            messages.push(ChatMessage::system(s.clone()));
        }
        messages.push(ChatMessage::user(prompt));
        self.chat_complete(&messages, temperature, max_tokens)
    }

    pub fn chat_complete(&self, messages: &[ChatMessage], temperature: f64, max_tokens: u32) -> Result<Completion> {
        if messages.iter().any(|m| m.role == Role::User && m.content.is_empty()) {
            return Err(Error::Validation("user message is empty".into()));
        }
        if messages.is_empty() {
            return Err(Error::Validation("no messages".into()));
        }
        let body = json!({
            "model": self.endpoint.model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
        });
        let payload = serde_json::to_vec(&body)?;
        let url = self.endpoint.url();
        let mut attempts = 0;
        loop {
            attempts += 1;
            let outcome = self.send_once(&url, &payload);
            match outcome {
                Ok(Attempt::Done(raw)) => {
                    let parsed = extract_content(&raw);
                    let logged = serde_json::from_str(&raw).unwrap_or(Value::String(raw.clone()));
                    self.log(&body, logged, attempts)?;
                    return parsed.map(|text| Completion { text, attempts });
                }
                Ok(Attempt::Retry(_)) if attempts <= self.endpoint.max_retries => {
                    thread::sleep(self.endpoint.backoff(attempts - 1));
                }
                Ok(Attempt::Retry(why)) => {
                    self.log(&body, json!({ "error": why }), attempts)?;
                    return Err(Error::Transport { attempts, message: why });
                }
                Err(e) => {
                    self.log(&body, json!({ "error": e.to_string() }), attempts)?;
                    return Err(e);
                }
            }
        }
    }

    fn log(&self, request: &Value, response: Value, attempts: u32) -> Result<()> {
        match &self.transcript {
            Some(t) => t.append(request, response, attempts),
            None => Ok(()),
        }
    }

    fn send_once(&self, url: &str, payload: &[u8]) -> Result<Attempt> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match req.send(payload) {
            Ok(r) => r,
            Err(e) => return classify_transport(e),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return classify_transport(e),
        };
        match status {
            200..=299 => Ok(Attempt::Done(text)),
            429 | 500..=599 => Ok(Attempt::Retry(format!("HTTP {status}"))),
            _ => Err(Error::Request { status, body: text }),
        }
    }
}

/// Timeouts and dropped connections are worth another try; anything else
/// (bad URL, TLS misconfiguration) is not.
fn classify_transport(e: ureq::Error) -> Result<Attempt> {
    match e {
        ureq::Error::Timeout(_)
        | ureq::Error::Io(_)
        | ureq::Error::ConnectionFailed
        | ureq::Error::HostNotFound
        | ureq::Error::BodyStalled => Ok(Attempt::Retry(e.to_string())),
        other => Err(Error::Transport { attempts: 1, message: other.to_string() }),
    }
}

fn extract_content(raw: &str) -> Result<String> {
    let v: Value = serde_json::from_str(raw).map_err(|e| Error::Protocol(format!("response is not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| Error::Protocol("response has no choices[0].message.content".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_extraction() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"85%"}}]}"#;
        assert_eq!(extract_content(ok).unwrap(), "85%");
        assert!(matches!(extract_content("{oops"), Err(Error::Protocol(_))));
        assert!(matches!(extract_content(r#"{"choices":[]}"#), Err(Error::Protocol(_))));
    }

    #[test]
    fn endpoint_rules() {
        let mut e = Endpoint::new("http://h:1/", "m");
        assert_eq!(e.url(), "http://h:1/v1/chat/completions");
        e.backoff_base_secs = 0.5;
        assert_eq!(e.backoff(0), Duration::from_millis(500));
        assert_eq!(e.backoff(3), Duration::from_secs(4));
        e.timeout_secs = 0.0;
        assert!(matches!(LlmClient::new(e.clone()), Err(Error::Config(_))));
        e.timeout_secs = 1.0;
        e.api_key_env = Some("FRAMETRACE_SURELY_UNSET_VAR".into());
        assert!(matches!(LlmClient::new(e), Err(Error::Config(_))));
    }
}

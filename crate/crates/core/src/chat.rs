//! Blocking chat-completion client shared by the remote agent backend and the
//! remote scorer.
//!
//! Wire format: `POST <url>` with
//! `{"model": ..., "messages": [{"role": ..., "content": ...}, ...]}` and an
//! optional `Authorization: Bearer <key>` header. The reply must carry
//! `choices[0].message.content`; `choices[0].finish_reason == "length"` marks
//! a truncated answer.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed reply: {0}")]
    Protocol(String),
    #[error("giving up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: Box<ChatError> },
}

impl ChatError {
    /// Transport failures, timeouts, 408, 429 and 5xx are retried.
    pub fn is_transient(&self) -> bool {
        match self {
            ChatError::Transport(_) => true,
            ChatError::Status { status, .. } => matches!(status, 408 | 429 | 500..=599),
            ChatError::Protocol(_) | ChatError::Exhausted { .. } => false,
        }
    }
}

/// Bounded retries with jittered exponential backoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_backoff: Duration::from_secs(1),
            max_backoff: Duration::from_secs(30),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self::immediate(0)
    }

    /// Retries without sleeping; used by tests and in-process backends.
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            initial_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
            jitter: false,
        }
    }

    /// Delay before retry number `retry` (1-based). With jitter the nominal
    /// delay is scaled by a uniform factor in `[0.5, 1]`.
    pub fn backoff(&self, retry: u32) -> Duration {
        let exp = 2f64.powi(retry.saturating_sub(1).min(30) as i32);
        let nominal = (self.initial_backoff.as_secs_f64() * exp).min(self.max_backoff.as_secs_f64());
        let factor = if self.jitter { rand::rng().random_range(0.5..=1.0) } else { 1.0 };
        Duration::from_secs_f64(nominal * factor)
    }
}

/// Counting semaphore capping in-flight requests.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Semaphore { permits: Mutex::new(permits.max(1)), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit { sem: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.sem.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.sem.freed.notify_one();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub text: String,
    pub truncated: bool,
    /// Retries spent before this reply succeeded.
    pub retries: u32,
}

#[derive(Debug, Clone)]
pub struct ChatEndpoint {
    pub url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_concurrent: usize,
    pub retry: RetryPolicy,
}

impl ChatEndpoint {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        ChatEndpoint {
            url: url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            max_concurrent: 8,
            retry: RetryPolicy::default(),
        }
    }

    pub fn with_api_key_from_env(mut self, var: &str) -> Self {
        self.api_key = std::env::var(var).ok().filter(|k| !k.is_empty());
        self
    }
}

#[derive(Serialize)]
struct RequestBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct ResponseBody {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

pub struct ChatClient {
    endpoint: ChatEndpoint,
    agent: ureq::Agent,
    in_flight: Semaphore,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("url", &self.endpoint.url)
            .field("model", &self.endpoint.model)
            .finish()
    }
}

impl ChatClient {
    pub fn new(endpoint: ChatEndpoint) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let in_flight = Semaphore::new(endpoint.max_concurrent);
        ChatClient { endpoint, agent, in_flight }
    }

    pub fn endpoint(&self) -> &ChatEndpoint {
        &self.endpoint
    }

    /// Sends one chat request, retrying transient failures per the endpoint's
    /// retry policy.
    pub fn complete(&self, messages: &[ChatMessage]) -> Result<ChatReply, ChatError> {
        let policy = self.endpoint.retry;
        let mut retries = 0;
        loop {
            let result = {
                let _permit = self.in_flight.acquire();
                self.send_once(messages)
            };
            match result {
                Ok((text, truncated)) => {
                    if retries > 0 {
                        log::info!("chat request to {} succeeded after {retries} retries", self.endpoint.url);
                    }
                    return Ok(ChatReply { text, truncated, retries });
                }
                Err(e) if e.is_transient() && retries < policy.max_retries => {
                    retries += 1;
                    let wait = policy.backoff(retries);
                    log::warn!("chat request failed ({e}); retry {retries}/{} in {wait:?}", policy.max_retries);
                    std::thread::sleep(wait);
                }
                Err(e) if retries > 0 || e.is_transient() => {
                    return Err(ChatError::Exhausted { attempts: retries + 1, last: Box::new(e) })
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn send_once(&self, messages: &[ChatMessage]) -> Result<(String, bool), ChatError> {
        let body = RequestBody { model: &self.endpoint.model, messages };
        let mut req = self.agent.post(&self.endpoint.url).header("Content-Type", "application/json");
        if let Some(key) = &self.endpoint.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| ChatError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ChatError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(ChatError::Status { status, body: text });
        }
        let parsed: ResponseBody =
            serde_json::from_str(&text).map_err(|e| ChatError::Protocol(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ChatError::Protocol("reply has no choices".into()))?;
        let content = choice
            .message
            .content
            .ok_or_else(|| ChatError::Protocol("reply has no message content".into()))?;
        let truncated = choice.finish_reason.as_deref() == Some("length");
        Ok((content, truncated))
    }
}

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{LlmError, TemplateId};

/// One chat-completion call.
#[derive(Clone, Debug, PartialEq)]
pub struct ChatRequest {
    pub template_id: TemplateId,
    pub system: String,
    pub prompt: String,
    pub temperature: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    /// Transport attempts used, at least 1.
    pub attempts: u32,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl Completion {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            attempts: 1,
            prompt_tokens: None,
            completion_tokens: None,
        }
    }
}

/// Anything that answers chat requests. Shared across threads.
pub trait ChatProvider: Send + Sync {
    fn tag(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError>;

    /// Told about each answer a resumed run keeps from before the interruption,
    /// in the original order.
    fn answered(&self, _id: TemplateId, _prompt_hash: &str) {}
}

/// One line of a replay script.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub template_id: TemplateId,
    pub response: String,
}

/// Scripted provider: pops the next response from a per-template FIFO.
#[derive(Debug, Default)]
pub struct ReplayProvider {
    queues: Mutex<BTreeMap<TemplateId, VecDeque<String>>>,
}

impl ReplayProvider {
    pub fn new(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        let mut queues: BTreeMap<TemplateId, VecDeque<String>> = BTreeMap::new();
        for e in entries {
            queues.entry(e.template_id).or_default().push_back(e.response);
        }
        Self {
            queues: Mutex::new(queues),
        }
    }

    /// Parses JSONL; blank lines are skipped and unknown keys ignored, so an
    /// `exchanges.jsonl` log replays as a script.
    pub fn from_jsonl(text: &str) -> Result<Self, LlmError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: ReplayEntry = serde_json::from_str(line).map_err(|e| LlmError::Replay {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(e);
        }
        Ok(Self::new(entries))
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Replay {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::from_jsonl(&text)
    }

    pub fn remaining(&self, id: TemplateId) -> usize {
        self.queues.lock().unwrap().get(&id).map_or(0, |q| q.len())
    }
}

impl ChatProvider for ReplayProvider {
    fn tag(&self) -> String {
        "replay".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let mut q = self.queues.lock().unwrap();
        q.get_mut(&request.template_id)
            .and_then(|q| q.pop_front())
            .map(Completion::new)
            .ok_or(LlmError::Exhausted(request.template_id))
    }

    fn answered(&self, id: TemplateId, _prompt_hash: &str) {
        if let Some(q) = self.queues.lock().unwrap().get_mut(&id) {
            q.pop_front();
        }
    }
}

/// Live endpoint settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Overrides the per-template temperature when set.
    pub temperature: Option<f64>,
    pub max_attempts: u32,
    pub timeout_secs: f64,
    pub requests_per_minute: u32,
    /// Environment variable holding the bearer token; `None` sends no credential.
    pub credential_env: Option<String>,
    /// First retry delay; doubles on every further retry.
    pub backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.deepseek.com/chat/completions".into(),
            model: "deepseek-chat".into(),
            temperature: None,
            max_attempts: 3,
            timeout_secs: 120.0,
            requests_per_minute: 60,
            credential_env: Some("REWARD_DISCOVERY_API_KEY".into()),
            backoff_ms: 1000,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_attempts < 1 {
            return Err(LlmError::Config("max_attempts must be at least 1".into()));
        }
        if self.requests_per_minute < 1 {
            return Err(LlmError::Config("requests_per_minute must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(LlmError::Config("timeout_secs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireContent,
}

#[derive(Deserialize)]
struct WireContent {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
}

/// JSON-over-HTTP chat-completion client with retries and a global rate limit.
pub struct HttpProvider {
    config: ProviderConfig,
    token: Option<String>,
    client: reqwest::blocking::Client,
    next_slot: Mutex<Option<Instant>>,
}

enum Failure {
    Retry(LlmError, Option<Duration>),
    Fatal(LlmError),
}

impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let token = match &config.credential_env {
            Some(var) => Some(std::env::var(var).map_err(|_| LlmError::MissingCredential(var.clone()))?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            config,
            token,
            client,
            next_slot: Mutex::new(None),
        })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn wait_for_slot(&self) {
        let interval = Duration::from_secs_f64(60.0 / self.config.requests_per_minute as f64);
        let mut slot = self.next_slot.lock().unwrap();
        let now = Instant::now();
        if let Some(t) = *slot {
            if t > now {
                thread::sleep(t - now);
            }
        }
        *slot = Some(Instant::now() + interval);
    }

    fn send(&self, request: &ChatRequest) -> Result<Completion, Failure> {
        let body = WireRequest {
            model: &self.config.model,
            messages: vec![
                WireMessage {
                    role: "system",
                    content: &request.system,
                },
                WireMessage {
                    role: "user",
                    content: &request.prompt,
                },
            ],
            temperature: self.config.temperature.unwrap_or(request.temperature),
        };
        let mut req = self.client.post(&self.config.endpoint).json(&body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| Failure::Retry(LlmError::Transport(e.to_string()), None))?;
        let status = resp.status();
        if !status.is_success() {
            let retry_after = resp
                .headers()
                .get(reqwest::header::RETRY_AFTER)
                .and_then(|v| v.to_str().ok())
                .and_then(|s| s.trim().parse::<f64>().ok())
                .map(|s| Duration::from_secs_f64(s.clamp(0.0, 60.0)));
            let text = resp.text().unwrap_or_default();
            let err = LlmError::Http {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            };
            return Err(if status.as_u16() == 429 || status.is_server_error() {
                Failure::Retry(err, retry_after)
            } else {
                Failure::Fatal(err)
            });
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| Failure::Fatal(LlmError::Transport(format!("malformed response body: {e}"))))?;
        let text = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default();
        if text.trim().is_empty() {
            return Err(Failure::Fatal(LlmError::EmptyCompletion));
        }
        let usage = wire.usage;
        Ok(Completion {
            text,
            attempts: 1,
            prompt_tokens: usage.as_ref().and_then(|u| u.prompt_tokens),
            completion_tokens: usage.as_ref().and_then(|u| u.completion_tokens),
        })
    }
}

impl ChatProvider for HttpProvider {
    fn tag(&self) -> String {
        format!("http:{}", self.config.model)
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, LlmError> {
        let mut delay = Duration::from_millis(self.config.backoff_ms);
        let mut last = None;
        for attempt in 1..=self.config.max_attempts {
            self.wait_for_slot();
            match self.send(request) {
                Ok(mut c) => {
                    c.attempts = attempt;
                    return Ok(c);
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retry(e, retry_after)) => {
                    log::warn!("attempt {attempt} of {} failed: {e}", self.config.max_attempts);
                    last = Some(e);
                    if attempt < self.config.max_attempts {
                        thread::sleep(retry_after.unwrap_or(delay));
                        delay *= 2;
                    }
                }
            }
        }
        Err(LlmError::RetriesExhausted {
            attempts: self.config.max_attempts,
            last: Box::new(last.expect("at least one attempt")),
        })
    }
}

//! Prompt templates, chat providers and response parsing.

mod parse;
mod provider;
mod synthetic;
mod templates;

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use parse::{parse_individual, parse_kt_plan, parse_summary, TransferPathway};
pub use provider::{
    ChatProvider, ChatRequest, Completion, HttpProvider, ProviderConfig, ReplayEntry, ReplayProvider,
};
pub use synthetic::SyntheticProvider;
pub use templates::{render_prompt, vars, PromptTemplate, TemplateId, SYSTEM_PROMPT};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("unknown template id `{0}`")]
    UnknownTemplate(String),
    #[error("template {id} is malformed at byte {offset}")]
    BadTemplate { id: TemplateId, offset: usize },
    #[error("template {id} is missing variables: {}", missing.join(", "))]
    MissingPlaceholders { id: TemplateId, missing: Vec<String> },
    #[error("response has no fenced code block")]
    NoCodeBlock,
    #[error("response code block is empty")]
    EmptyCode,
    #[error("response has no transfer plan")]
    NoPlan,
    #[error("no usable response after {attempts} attempts: {reason}")]
    Malformed { attempts: u32, reason: String },
    #[error("replay script has no response left for template {0}")]
    Exhausted(TemplateId),
    #[error("replay script line {line}: {message}")]
    Replay { line: usize, message: String },
    #[error("provider configuration: {0}")]
    Config(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("empty completion")]
    EmptyCompletion,
    #[error("gave up after {attempts} attempts, last error: {last}")]
    RetriesExhausted { attempts: u32, last: Box<LlmError> },
    #[error("exchange log: {0}")]
    Log(#[from] io::Error),
}

impl LlmError {
    /// Whether the failure comes from the response text rather than the provider.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            LlmError::NoCodeBlock | LlmError::EmptyCode | LlmError::NoPlan | LlmError::Malformed { .. }
        )
    }
}

/// One logged request/response pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub template_id: TemplateId,
    pub prompt_hash: String,
    #[serde(skip)]
    pub rendered_prompt: String,
    pub response: String,
    pub provider: String,
    /// Provider calls made for this request so far, transport retries and
    /// format re-prompts included; starts at 1.
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
    /// Not serialized, so logs of identical runs are byte-identical.
    #[serde(skip)]
    pub latency_ms: f64,
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// A code-generating response that passed the caller's check.
#[derive(Clone, Debug)]
pub struct Generated<T> {
    pub thought: String,
    pub code: String,
    pub value: T,
    pub attempts: u32,
}

const FORMAT_REMINDER: &str = "\n\nReminder: your previous answer could not be used";

/// Provider plus exchange log and the malformed-output policy.
pub struct LlmClient {
    provider: Arc<dyn ChatProvider>,
    max_attempts: u32,
    log_file: Option<Mutex<File>>,
    exchanges: Mutex<Vec<ChatExchange>>,
}

impl LlmClient {
    pub fn new(provider: Arc<dyn ChatProvider>) -> Self {
        Self {
            provider,
            max_attempts: 3,
            log_file: None,
            exchanges: Mutex::new(Vec::new()),
        }
    }

    /// Re-prompts at most `n - 1` times after malformed output.
    pub fn with_max_attempts(mut self, n: u32) -> Self {
        self.max_attempts = n.max(1);
        self
    }

    /// Appends every exchange as one JSON line to `path`.
    pub fn with_log_file(mut self, path: &Path) -> io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        self.log_file = Some(Mutex::new(f));
        Ok(self)
    }

    pub fn provider_tag(&self) -> String {
        self.provider.tag()
    }

    pub fn exchanges(&self) -> Vec<ChatExchange> {
        self.exchanges.lock().unwrap().clone()
    }

    /// Exchanges made through this client.
    pub fn exchange_count(&self) -> usize {
        self.exchanges.lock().unwrap().len()
    }

    fn call(&self, id: TemplateId, prompt: String, prior_attempts: u32) -> Result<ChatExchange, LlmError> {
        let request = ChatRequest {
            template_id: id,
            system: SYSTEM_PROMPT.to_string(),
            prompt,
            temperature: id.temperature(),
        };
        let start = Instant::now();
        let c = self.provider.complete(&request)?;
        let ex = ChatExchange {
            template_id: id,
            prompt_hash: prompt_hash(&request.prompt),
            rendered_prompt: request.prompt,
            response: c.text,
            provider: self.provider.tag(),
            attempt: prior_attempts + c.attempts,
            prompt_tokens: c.prompt_tokens,
            completion_tokens: c.completion_tokens,
            latency_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if let Some(f) = &self.log_file {
            let mut f = f.lock().unwrap();
            writeln!(f, "{}", serde_json::to_string(&ex).expect("exchange serializes"))?;
        }
        self.exchanges.lock().unwrap().push(ex.clone());
        Ok(ex)
    }

    /// Renders `id` and returns the raw response.
    pub fn ask(&self, id: TemplateId, variables: &BTreeMap<String, String>) -> Result<ChatExchange, LlmError> {
        let prompt = render_prompt(id, variables)?;
        self.call(id, prompt, 0)
    }

    /// Renders `id`, parses a (thought, code) pair and runs `check` on the code.
    /// Unusable answers are re-prompted with a reminder of the output format.
    pub fn ask_code<T>(
        &self,
        id: TemplateId,
        variables: &BTreeMap<String, String>,
        check: impl Fn(&str) -> Result<T, String>,
    ) -> Result<Generated<T>, LlmError> {
        let base = render_prompt(id, variables)?;
        let mut prompt = base.clone();
        let mut used = 0;
        let mut reason = String::new();
        for _ in 0..self.max_attempts {
            let ex = self.call(id, prompt, used)?;
            used = ex.attempt;
            let outcome = parse_individual(&ex.response)
                .map_err(|e| e.to_string())
                .and_then(|(thought, code)| check(&code).map(|v| (thought, code, v)));
            match outcome {
                Ok((thought, code, value)) => {
                    return Ok(Generated {
                        thought,
                        code,
                        value,
                        attempts: used,
                    })
                }
                Err(e) => {
                    log::warn!("{id}: unusable response ({e}), re-prompting");
                    reason = e;
                }
            }
            prompt = format!(
                "{base}{FORMAT_REMINDER} ({reason}). Answer with a short description followed by exactly one ```rsl code block holding the complete program."
            );
        }
        Err(LlmError::Malformed {
            attempts: used,
            reason,
        })
    }
}

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::fnv1a;
use super::prompt::prompt_field;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 0.2,
            max_tokens: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub system: String,
    pub user: String,
    pub params: GenerationParams,
}

impl LlmRequest {
    /// Stable key identifying the request text.
    pub fn key(&self) -> String {
        let mut bytes = self.system.as_bytes().to_vec();
        bytes.push(0);
        bytes.extend_from_slice(self.user.as_bytes());
        format!("{:016x}", fnv1a(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider returned an unusable response: {0}")]
    Malformed(String),
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> std::result::Result<String, LlmError>;

    fn kind(&self) -> &'static str;
}

/// Deterministic offline client. Builds a rewrite from the fields of the
/// rendered prompt; the template variant is chosen by the request hash.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockClient;

fn sentence_case_start(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

fn lowercase_start(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(c) if !text.split_whitespace().next().is_some_and(|w| w.chars().all(|c| !c.is_lowercase())) => {
            c.to_lowercase().collect::<String>() + chars.as_str()
        }
        Some(_) => text.to_string(),
        None => String::new(),
    }
}

impl LlmClient for MockClient {
    fn complete(&self, request: &LlmRequest) -> std::result::Result<String, LlmError> {
        let user = &request.user;
        let headline = prompt_field(user, "Original headline:")
            .ok_or_else(|| LlmError::Malformed("prompt lacks original headline".into()))?;
        let subhead = prompt_field(user, "Original subhead:").unwrap_or("");
        let variant = fnv1a(request.key().as_bytes()) % 3;
        let sub = subhead.trim_end_matches('.');
        let (new_headline, new_subhead) = if let Some(ctx) = prompt_field(user, "Previously read headline:") {
            let lead = ["After the story you read", "Following up on your reading", "Connected to a story you read"]
                [variant as usize];
            (
                headline.to_string(),
                format!("{lead} ({}): {}.", lowercase_start(ctx.trim_end_matches('.')), lowercase_start(sub)),
            )
        } else if let Some(topics) = prompt_field(user, "Reader topics:") {
            let first = topics.split(", ").next().unwrap_or(topics);
            let lead = ["For readers who follow", "Of interest if you follow", "A new angle for fans of"]
                [variant as usize];
            (
                headline.to_string(),
                format!("{lead} {first}: {}.", lowercase_start(sub)),
            )
        } else {
            (headline.to_string(), sentence_case_start(subhead))
        };
        Ok(format!("Headline: {new_headline}\nSubhead: {new_subhead}"))
    }

    fn kind(&self) -> &'static str {
        "mock"
    }
}

/// Returns a fixed sequence of responses, one per call; the last entry
/// repeats once the script runs out.
pub struct ScriptedClient {
    script: Vec<std::result::Result<String, LlmError>>,
    calls: Mutex<usize>,
    seen: Mutex<Vec<LlmRequest>>,
}

impl ScriptedClient {
    pub fn new(script: Vec<std::result::Result<String, LlmError>>) -> Self {
        assert!(!script.is_empty(), "script needs at least one response");
        ScriptedClient {
            script,
            calls: Mutex::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn responses<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new(texts.into_iter().map(|t| Ok(t.into())).collect())
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl LlmClient for ScriptedClient {
    fn complete(&self, request: &LlmRequest) -> std::result::Result<String, LlmError> {
        let mut calls = self.calls.lock().unwrap();
        let i = (*calls).min(self.script.len() - 1);
        *calls += 1;
        self.seen.lock().unwrap().push(request.clone());
        self.script[i].clone()
    }

    fn kind(&self) -> &'static str {
        "scripted"
    }
}

/// Fixture record for [`ReplayClient`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub key: String,
    pub response: String,
}

/// Serves recorded responses keyed by [`LlmRequest::key`]. Unknown requests
/// are transport failures.
#[derive(Debug, Clone, Default)]
pub struct ReplayClient {
    entries: HashMap<String, String>,
}

impl ReplayClient {
    pub fn from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        ReplayClient {
            entries: entries.into_iter().map(|e| (e.key, e.response)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            entries.push(
                serde_json::from_str::<ReplayEntry>(line)
                    .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e))?,
            );
        }
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl LlmClient for ReplayClient {
    fn complete(&self, request: &LlmRequest) -> std::result::Result<String, LlmError> {
        self.entries
            .get(&request.key())
            .cloned()
            .ok_or_else(|| LlmError::Transport(format!("no recorded response for {}", request.key())))
    }

    fn kind(&self) -> &'static str {
        "replay"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpClientConfig {
    /// Chat-completions style endpoint URL.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    /// When set, request and response bodies are appended here as JSON lines.
    #[serde(default)]
    pub body_log: Option<PathBuf>,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 20,
            body_log: None,
        }
    }
}

/// Remote provider speaking the chat-completions JSON shape.
pub struct HttpClient {
    config: HttpClientConfig,
    api_key: String,
    http: reqwest::blocking::Client,
    log: Option<Mutex<fs::File>>,
}

impl std::fmt::Debug for HttpClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpClient")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatContent,
}

#[derive(Deserialize)]
struct ChatContent {
    content: Option<String>,
}

impl HttpClient {
    pub fn new(config: HttpClientConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            Error::Config(format!("environment variable {} is not set", config.api_key_env))
        })?;
        Self::with_key(config, api_key)
    }

    pub fn with_key(config: HttpClientConfig, api_key: String) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Llm(e.to_string()))?;
        let log = match &config.body_log {
            Some(p) => Some(Mutex::new(
                fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| Error::io(p, e))?,
            )),
            None => None,
        };
        Ok(HttpClient {
            config,
            api_key,
            http,
            log,
        })
    }

    /// Request body for `request`; exposed so the wire shape can be checked
    /// without a network.
    pub fn request_body(&self, request: &LlmRequest) -> serde_json::Value {
        serde_json::to_value(ChatRequest {
            model: &self.config.model,
            messages: [
                ChatMessage { role: "system", content: &request.system },
                ChatMessage { role: "user", content: &request.user },
            ],
            temperature: request.params.temperature,
            max_tokens: request.params.max_tokens,
        })
        .expect("chat request serializes")
    }

    pub fn parse_body(body: &str) -> std::result::Result<String, LlmError> {
        let parsed: ChatResponse =
            serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Malformed("no choices in response".into()))
    }

    fn log_bodies(&self, request: &serde_json::Value, response: &str) {
        let Some(log) = &self.log else { return };
        let mut line = serde_json::json!({ "request": request, "response": response }).to_string();
        if !self.api_key.is_empty() {
            line = line.replace(&self.api_key, "<redacted>");
        }
        if let Ok(mut f) = log.lock() {
            let _ = writeln!(f, "{line}");
        }
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, request: &LlmRequest) -> std::result::Result<String, LlmError> {
        let body = self.request_body(request);
        let response = self
            .http
            .post(&self.config.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        self.log_bodies(&body, &text);
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(LlmError::Transport(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(LlmError::Malformed(format!("status {status}")));
        }
        Self::parse_body(&text)
    }

    fn kind(&self) -> &'static str {
        "http"
    }
}

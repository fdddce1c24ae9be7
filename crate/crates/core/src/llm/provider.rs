use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 4096,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProviderKind {
    Live,
    Cassette,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub template_id: String,
    pub prompt: String,
    pub prompt_hash: String,
    pub decoding: Decoding,
    /// Independent sampling lane (trial index); part of the replay key.
    pub lane: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("provider failure: {0}")]
    Fatal(String),
    #[error("no cassette entry for template {template_id} hash {hash} lane {lane}")]
    CassetteMiss {
        template_id: String,
        hash: String,
        lane: u32,
    },
}

pub trait Provider: Send + Sync {
    fn kind(&self) -> ProviderKind;
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

/// OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LiveConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
}

pub struct HttpProvider {
    config: LiveConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: LiveConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok();
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
        }
    }
}

impl Provider for HttpProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Live
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.decoding.temperature,
            "max_tokens": request.decoding.max_tokens,
            "seed": request.lane,
        });
        let mut call = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(&body)
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        if status == 429 || status >= 500 {
            return Err(ProviderError::Transient(format!("HTTP {status}: {text}")));
        }
        if status >= 400 {
            return Err(ProviderError::Fatal(format!("HTTP {status}: {text}")));
        }
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| ProviderError::Fatal(format!("bad JSON response: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                ProviderError::Fatal("response has no choices[0].message.content".into())
            })
    }
}

/// Test provider answering from per-template queues of canned replies.
/// When a queue holds one reply it is repeated indefinitely.
#[derive(Default)]
pub struct ScriptedProvider {
    replies: Mutex<BTreeMap<String, VecDeque<Result<String, ProviderError>>>>,
}

impl ScriptedProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reply(self, template_id: &str, text: impl Into<String>) -> Self {
        self.push(template_id, Ok(text.into()));
        self
    }

    pub fn fail(self, template_id: &str, error: ProviderError) -> Self {
        self.push(template_id, Err(error));
        self
    }

    pub fn push(&self, template_id: &str, reply: Result<String, ProviderError>) {
        self.replies
            .lock()
            .unwrap()
            .entry(template_id.to_string())
            .or_default()
            .push_back(reply);
    }
}

impl Provider for ScriptedProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::Live
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let mut replies = self.replies.lock().unwrap();
        let queue = replies.get_mut(&request.template_id).ok_or_else(|| {
            ProviderError::Fatal(format!("no scripted reply for {}", request.template_id))
        })?;
        if queue.len() > 1 {
            queue.pop_front().unwrap()
        } else {
            queue.front().cloned().ok_or_else(|| {
                ProviderError::Fatal(format!("no scripted reply for {}", request.template_id))
            })?
        }
    }
}

/// Routes each call through a closure; handy for prompt-dependent fakes.
pub struct FnProvider<F>(pub F);

impl<F> Provider for FnProvider<F>
where
    F: Fn(&CompletionRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn kind(&self) -> ProviderKind {
        ProviderKind::Live
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        (self.0)(request)
    }
}

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::provider::{CompletionRequest, Decoding, Provider, ProviderError, ProviderKind};
use super::template::TemplateRegistry;
use super::GatewayError;

pub type Vars = BTreeMap<String, String>;

/// Builds a variable map from `(name, value)` pairs.
pub fn vars<const N: usize>(pairs: [(&str, String); N]) -> Vars {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub template_id: String,
    pub rendered_prompt_hash: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub prompt: String,
    pub response_text: String,
    pub provider: ProviderKind,
    pub latency_ms: u64,
    pub lane: u32,
    pub retries: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub exchanges: Vec<Exchange>,
    /// Cassette misses, as `template_id:hash:lane`.
    pub misses: Vec<String>,
}

impl Transcript {
    pub fn count(&self, template_id: &str) -> usize {
        self.exchanges
            .iter()
            .filter(|e| e.template_id == template_id)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub default_decoding: Decoding,
    /// Per-template decoding overrides.
    #[serde(default)]
    pub overrides: BTreeMap<String, Decoding>,
    pub retry: RetryPolicy,
    /// Keep rendered prompt text in the transcript.
    pub keep_prompts: bool,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            default_decoding: Decoding::default(),
            overrides: BTreeMap::new(),
            retry: RetryPolicy::default(),
            keep_prompts: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CallOptions {
    pub lane: u32,
    /// Overrides the configured temperature for this call only.
    pub temperature: Option<f64>,
}

impl CallOptions {
    pub fn lane(lane: u32) -> Self {
        Self {
            lane,
            temperature: None,
        }
    }
}

/// Renders templates, calls the provider with bounded retry and appends every
/// exchange to a transcript. Cloning shares the transcript; [`fork`] starts a
/// private one that can later be folded back with [`absorb`].
///
/// [`fork`]: LlmGateway::fork
/// [`absorb`]: LlmGateway::absorb
#[derive(Clone)]
pub struct LlmGateway {
    registry: Arc<TemplateRegistry>,
    provider: Arc<dyn Provider>,
    config: Arc<GatewayConfig>,
    transcript: Arc<Mutex<Transcript>>,
}

impl LlmGateway {
    pub fn new(
        registry: TemplateRegistry,
        provider: Arc<dyn Provider>,
        config: GatewayConfig,
    ) -> Self {
        Self {
            registry: Arc::new(registry),
            provider,
            config: Arc::new(config),
            transcript: Arc::new(Mutex::new(Transcript::default())),
        }
    }

    /// Builtin templates, default config.
    pub fn with_provider(provider: Arc<dyn Provider>) -> Self {
        Self::new(
            TemplateRegistry::builtin(),
            provider,
            GatewayConfig::default(),
        )
    }

    pub fn provider_kind(&self) -> ProviderKind {
        self.provider.kind()
    }

    pub fn registry(&self) -> &TemplateRegistry {
        &self.registry
    }

    pub fn fork(&self) -> Self {
        Self {
            transcript: Arc::new(Mutex::new(Transcript::default())),
            ..self.clone()
        }
    }

    pub fn absorb(&self, other: &LlmGateway) {
        if Arc::ptr_eq(&self.transcript, &other.transcript) {
            return;
        }
        let taken = std::mem::take(&mut *other.transcript.lock().unwrap());
        let mut mine = self.transcript.lock().unwrap();
        mine.exchanges.extend(taken.exchanges);
        mine.misses.extend(taken.misses);
    }

    pub fn transcript(&self) -> Transcript {
        self.transcript.lock().unwrap().clone()
    }

    pub fn count(&self, template_id: &str) -> usize {
        self.transcript.lock().unwrap().count(template_id)
    }

    pub fn miss_count(&self) -> usize {
        self.transcript.lock().unwrap().misses.len()
    }

    fn decoding_for(&self, template_id: &str, opts: CallOptions) -> Decoding {
        let mut d = self
            .config
            .overrides
            .get(template_id)
            .copied()
            .unwrap_or(self.config.default_decoding);
        if let Some(t) = opts.temperature {
            d.temperature = t;
        }
        d
    }

    pub fn complete(
        &self,
        template_id: &str,
        vars: &Vars,
        opts: CallOptions,
    ) -> Result<String, GatewayError> {
        let rendered = self.registry.render(template_id, vars)?;
        let request = CompletionRequest {
            template_id: template_id.to_string(),
            prompt: rendered.text,
            prompt_hash: rendered.hash,
            decoding: self.decoding_for(template_id, opts),
            lane: opts.lane,
        };
        let started = Instant::now();
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut attempt = 0;
        let response = loop {
            attempt += 1;
            match self.provider.complete(&request) {
                Ok(text) => break text,
                Err(ProviderError::CassetteMiss {
                    template_id,
                    hash,
                    lane,
                }) => {
                    self.transcript
                        .lock()
                        .unwrap()
                        .misses
                        .push(format!("{template_id}:{hash}:{lane}"));
                    return Err(GatewayError::CassetteMiss {
                        template_id,
                        hash,
                        lane,
                    });
                }
                Err(ProviderError::Transient(msg)) if attempt < max_attempts => {
                    warn!(template = template_id, attempt, %msg, "transient provider failure, retrying");
                    let delay = self
                        .config
                        .retry
                        .base_delay_ms
                        .saturating_mul(1 << (attempt - 1));
                    if delay > 0 {
                        std::thread::sleep(Duration::from_millis(delay));
                    }
                }
                Err(e) => return Err(GatewayError::Provider(e.to_string())),
            }
        };
        let exchange = Exchange {
            template_id: template_id.to_string(),
            rendered_prompt_hash: request.prompt_hash,
            prompt: if self.config.keep_prompts {
                request.prompt
            } else {
                String::new()
            },
            response_text: response.clone(),
            provider: self.provider.kind(),
            latency_ms: started.elapsed().as_millis() as u64,
            lane: opts.lane,
            retries: attempt - 1,
        };
        self.transcript.lock().unwrap().exchanges.push(exchange);
        Ok(response)
    }
}

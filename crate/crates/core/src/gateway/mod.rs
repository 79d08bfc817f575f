//! Chat-completion access to LLM classifiers: prompt rendering, reply
//! parsing, response caching, retries, bounded concurrency and cost
//! accounting.

pub mod cache;
pub mod parse;
pub mod template;
pub mod transport;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::ProbVector;
use crate::model::{ModelError, ProbModel};

pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use parse::{first_json_object, parse_reply};
pub use template::{FewShotExample, TaskTemplate};
pub use transport::{
    ChatMessage, ChatReply, ChatRequest, CountingTransport, HttpTransport, StubRule, StubTable, StubTransport,
    Transport, TransportError,
};

/// Characters per token used for context-length estimates.
pub const CHARS_PER_TOKEN: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid endpoint: {0}")]
    Config(String),
    #[error("invalid template: {0}")]
    Template(String),
    #[error("cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub top_p: f64,
    pub max_context_tokens: usize,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    /// Base delay before retrying a transport failure; doubles per attempt.
    pub retry_backoff_ms: u64,
}

impl Default for ModelEndpoint {
    fn default() -> Self {
        ModelEndpoint {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-3.5-turbo".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            top_p: 1.0,
            max_context_tokens: 4096,
            request_timeout_secs: 60.0,
            max_retries: 3,
            max_in_flight: 4,
            retry_backoff_ms: 500,
        }
    }
}

impl ModelEndpoint {
    /// An endpoint for the offline stub transport.
    pub fn stub() -> Self {
        ModelEndpoint {
            base_url: "stub://local".into(),
            model_name: "stub".into(),
            api_key_env: None,
            retry_backoff_ms: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.base_url.trim().is_empty() {
            return Err(GatewayError::Config("base_url is empty".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(GatewayError::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_context_tokens == 0 || self.max_in_flight == 0 {
            return Err(GatewayError::Config(
                "max_context_tokens and max_in_flight must be positive".into(),
            ));
        }
        if !(self.request_timeout_secs > 0.0 && self.request_timeout_secs.is_finite()) {
            return Err(GatewayError::Config("request_timeout_secs must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Price {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

/// model name → per-1K-token prices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, Price>);

impl PriceTable {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    /// Unpriced models cost 0.
    pub fn cost(&self, model: &str, prompt_tokens: u64, completion_tokens: u64) -> f64 {
        self.0.get(model).map_or(0.0, |p| {
            prompt_tokens as f64 / 1000.0 * p.input_per_1k + completion_tokens as f64 / 1000.0 * p.output_per_1k
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: usize,
    pub hits: u64,
    pub misses: u64,
    pub estimated_cost: f64,
}

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn new(n: usize) -> Self {
        Permits {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("permit lock poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("permit lock poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permit lock poisoned") += 1;
        self.0.cv.notify_one();
    }
}

/// The follow-up message sent after an unusable reply. Depends only on its
/// arguments, so retry transcripts are reproducible.
pub fn retry_reminder(template: &TaskTemplate, attempt: u32, max_attempts: u32, reason: &str) -> String {
    format!(
        "Your previous reply could not be used: {reason}. This is attempt {attempt} of {max_attempts}. \
         {} Do not add any other text, explanation or formatting.",
        template.schema_reminder()
    )
}

/// Shareable client for one endpoint. All mutable state sits behind the
/// cache lock, the in-flight permits or atomics.
pub struct Gateway {
    endpoint: ModelEndpoint,
    transport: Box<dyn Transport>,
    cache: Mutex<ResponseCache>,
    prices: PriceTable,
    permits: Permits,
    hits: AtomicU64,
    misses: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    requests: AtomicUsize,
}

impl Gateway {
    pub fn new(
        endpoint: ModelEndpoint,
        transport: impl Transport + 'static,
        cache: ResponseCache,
        prices: PriceTable,
    ) -> Result<Self, GatewayError> {
        endpoint.validate()?;
        Ok(Gateway {
            permits: Permits::new(endpoint.max_in_flight),
            endpoint,
            transport: Box::new(transport),
            cache: Mutex::new(cache),
            prices,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            prompt_tokens: AtomicU64::new(0),
            completion_tokens: AtomicU64::new(0),
            requests: AtomicUsize::new(0),
        })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    /// Transport calls issued by this gateway.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn cache_stats(&self) -> CacheStats {
        CacheStats {
            entries: self.cache.lock().expect("cache lock poisoned").len(),
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
            estimated_cost: self.prices.cost(
                &self.endpoint.model_name,
                self.prompt_tokens.load(Ordering::SeqCst),
                self.completion_tokens.load(Ordering::SeqCst),
            ),
        }
    }

    fn api_key(&self) -> Result<Option<String>, ModelError> {
        if !self.transport.needs_api_key() {
            return Ok(None);
        }
        match &self.endpoint.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .ok()
                .filter(|k| !k.is_empty())
                .map(Some)
                .ok_or_else(|| ModelError::MissingApiKey(var.clone())),
        }
    }

    /// The cached entry for `prompt` under `template`, if any.
    pub fn cached(&self, template: &TaskTemplate, prompt: &str) -> Option<CacheEntry> {
        let key = cache_key(&self.endpoint.model_name, self.endpoint.top_p, &template.render(prompt));
        self.cache.lock().expect("cache lock poisoned").get(&key).cloned()
    }

    pub fn predict(&self, template: &TaskTemplate, prompt: &str) -> Result<ProbVector, ModelError> {
        let rendered = template.render(prompt);
        let estimated = rendered.chars().count().div_ceil(CHARS_PER_TOKEN);
        if estimated > self.endpoint.max_context_tokens {
            return Err(ModelError::ContextOverflow {
                estimated,
                limit: self.endpoint.max_context_tokens,
            });
        }
        let key = cache_key(&self.endpoint.model_name, self.endpoint.top_p, &rendered);
        if let Some(hit) = self.cache.lock().expect("cache lock poisoned").get(&key) {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(hit.probs.clone());
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        let api_key = self.api_key()?;

        let max_attempts = self.endpoint.max_retries + 1;
        let mut request = ChatRequest {
            model: self.endpoint.model_name.clone(),
            messages: vec![ChatMessage::user(rendered)],
            top_p: self.endpoint.top_p,
        };
        let mut last_raw = String::new();
        let mut last_reason = String::new();
        for attempt in 1..=max_attempts {
            let sent = {
                let _permit = self.permits.acquire();
                self.requests.fetch_add(1, Ordering::SeqCst);
                self.transport.send(&request, api_key.as_deref())
            };
            let reply = match sent {
                Ok(r) => r,
                Err(e) if attempt == max_attempts => {
                    return Err(ModelError::Transport {
                        attempts: attempt,
                        message: e.message,
                    })
                }
                Err(e) => {
                    log::warn!("transport attempt {attempt}/{max_attempts} failed: {}", e.message);
                    let backoff = self.endpoint.retry_backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    if backoff > 0 {
                        std::thread::sleep(Duration::from_millis(backoff));
                    }
                    continue;
                }
            };
            let pt = reply
                .prompt_tokens
                .unwrap_or_else(|| request.messages.iter().map(|m| m.content.len().div_ceil(CHARS_PER_TOKEN) as u64).sum());
            let ct = reply
                .completion_tokens
                .unwrap_or(reply.content.len().div_ceil(CHARS_PER_TOKEN) as u64);
            self.prompt_tokens.fetch_add(pt, Ordering::SeqCst);
            self.completion_tokens.fetch_add(ct, Ordering::SeqCst);

            match parse_reply(&reply.content, template) {
                Ok(probs) => {
                    let entry = CacheEntry {
                        key: key.clone(),
                        model: self.endpoint.model_name.clone(),
                        raw_response: reply.content,
                        probs,
                        timestamp: SystemTime::now()
                            .duration_since(UNIX_EPOCH)
                            .map_or(0, |d| d.as_secs()),
                        prompt_tokens: pt,
                        completion_tokens: ct,
                    };
                    let mut cache = self.cache.lock().expect("cache lock poisoned");
                    // A concurrent caller may have stored this key first; the first response wins.
                    if let Some(existing) = cache.get(&key) {
                        return Ok(existing.probs.clone());
                    }
                    let probs = entry.probs.clone();
                    cache.insert(entry).map_err(|e| ModelError::Other(e.to_string()))?;
                    return Ok(probs);
                }
                Err(reason) => {
                    log::debug!("unusable reply on attempt {attempt}/{max_attempts}: {reason}");
                    if attempt < max_attempts {
                        request.messages.push(ChatMessage::assistant(reply.content.clone()));
                        request
                            .messages
                            .push(ChatMessage::user(retry_reminder(template, attempt + 1, max_attempts, &reason)));
                    }
                    last_raw = reply.content;
                    last_reason = reason;
                }
            }
        }
        Err(ModelError::PredictFailed {
            attempts: max_attempts,
            raw_text: last_raw,
            reason: last_reason,
        })
    }
}

/// A gateway bound to one task template, usable wherever a [`ProbModel`]
/// is expected. Batches run on up to `max_in_flight` scoped threads.
pub struct GatewayModel<'a> {
    pub gateway: &'a Gateway,
    pub template: &'a TaskTemplate,
}

impl ProbModel for GatewayModel<'_> {
    fn predict(&self, prompt: &str) -> Result<ProbVector, ModelError> {
        self.gateway.predict(self.template, prompt)
    }

    fn predict_batch(&self, prompts: &[String]) -> Vec<Result<ProbVector, ModelError>> {
        let workers = self.gateway.endpoint.max_in_flight.min(prompts.len());
        if workers <= 1 {
            return prompts.iter().map(|p| self.predict(p)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<ProbVector, ModelError>>>> =
            prompts.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= prompts.len() {
                        break;
                    }
                    let r = self.predict(&prompts[i]);
                    *slots[i].lock().expect("slot lock poisoned") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock poisoned").expect("every slot filled"))
            .collect()
    }
}

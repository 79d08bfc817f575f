//! Wire transports for chat-completion requests.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{GatewayError, ModelEndpoint};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "assistant".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub top_p: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatReply {
    pub content: String,
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportError {
    pub message: String,
}

impl TransportError {
    pub fn new(message: impl Into<String>) -> Self {
        TransportError {
            message: message.into(),
        }
    }
}

pub trait Transport: Send + Sync {
    /// `api_key` is `None` when the endpoint names no key variable.
    fn send(&self, request: &ChatRequest, api_key: Option<&str>) -> Result<ChatReply, TransportError>;

    /// Whether the gateway must resolve the endpoint's API key first.
    fn needs_api_key(&self) -> bool {
        true
    }
}

/// Blocking HTTPS transport for endpoints speaking the common chat API.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    url: String,
}

impl HttpTransport {
    pub fn new(endpoint: &ModelEndpoint) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(endpoint.request_timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        let base = endpoint.base_url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        Ok(HttpTransport { client, url })
    }
}

/// Pulls `choices[0].message.content` and usage counts from a response body.
pub fn parse_chat_response(body: &str) -> Result<ChatReply, TransportError> {
    let v: Value = serde_json::from_str(body).map_err(|e| TransportError::new(format!("response is not JSON: {e}")))?;
    let content = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| TransportError::new("response lacks choices[0].message.content"))?;
    Ok(ChatReply {
        content: content.to_string(),
        prompt_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        completion_tokens: v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    })
}

impl Transport for HttpTransport {
    fn send(&self, request: &ChatRequest, api_key: Option<&str>) -> Result<ChatReply, TransportError> {
        let body = serde_json::to_vec(request).map_err(|e| TransportError::new(e.to_string()))?;
        let mut req = self
            .client
            .post(&self.url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| TransportError::new(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| TransportError::new(e.to_string()))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(TransportError::new(format!("HTTP {status}: {snippet}")));
        }
        parse_chat_response(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StubRule {
    pub contains: String,
    pub reply: String,
}

/// Reply table for [`StubTransport`]. Lookup order: exact prompt match,
/// first `contains` rule matching, then `default`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StubTable {
    #[serde(default)]
    pub exact: BTreeMap<String, String>,
    #[serde(default)]
    pub rules: Vec<StubRule>,
    #[serde(default)]
    pub default: Option<String>,
}

impl StubTable {
    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| GatewayError::Config(format!("{}: {e}", path.display())))
    }

    pub fn lookup(&self, prompt: &str) -> Option<&str> {
        self.exact
            .get(prompt)
            .or_else(|| self.rules.iter().find(|r| prompt.contains(&r.contains)).map(|r| &r.reply))
            .or(self.default.as_ref())
            .map(String::as_str)
    }
}

type ReplyFn = dyn Fn(&str) -> Option<String> + Send + Sync;

/// Deterministic offline endpoint. Replies depend only on the first user
/// message (the rendered prompt), so retries see the same reply.
pub struct StubTransport {
    responder: Box<ReplyFn>,
    log: Mutex<Vec<ChatRequest>>,
}

impl StubTransport {
    pub fn from_table(table: StubTable) -> Self {
        Self::from_fn(move |p| table.lookup(p).map(str::to_string))
    }

    pub fn from_fn(f: impl Fn(&str) -> Option<String> + Send + Sync + 'static) -> Self {
        StubTransport {
            responder: Box::new(f),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Every request received, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().expect("stub log poisoned").clone()
    }
}

fn estimate(text: &str) -> u64 {
    text.chars().count().div_ceil(4) as u64
}

impl Transport for StubTransport {
    fn send(&self, request: &ChatRequest, _api_key: Option<&str>) -> Result<ChatReply, TransportError> {
        self.log.lock().expect("stub log poisoned").push(request.clone());
        let prompt = request
            .messages
            .iter()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let content = (self.responder)(prompt).ok_or_else(|| TransportError::new("stub has no reply for prompt"))?;
        let prompt_tokens = request.messages.iter().map(|m| estimate(&m.content)).sum();
        Ok(ChatReply {
            completion_tokens: Some(estimate(&content)),
            prompt_tokens: Some(prompt_tokens),
            content,
        })
    }

    fn needs_api_key(&self) -> bool {
        false
    }
}

/// Wraps a transport, counting calls and the peak number in flight.
pub struct CountingTransport<T> {
    inner: T,
    delay: Duration,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl<T: Transport> CountingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self::with_delay(inner, Duration::ZERO)
    }

    /// `delay` is held inside the in-flight window to widen overlaps.
    pub fn with_delay(inner: T, delay: Duration) -> Self {
        CountingTransport {
            inner,
            delay,
            calls: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: Transport> Transport for CountingTransport<T> {
    fn send(&self, request: &ChatRequest, api_key: Option<&str>) -> Result<ChatReply, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let out = self.inner.send(request, api_key);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }

    fn needs_api_key(&self) -> bool {
        self.inner.needs_api_key()
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn send(&self, request: &ChatRequest, api_key: Option<&str>) -> Result<ChatReply, TransportError> {
        (**self).send(request, api_key)
    }

    fn needs_api_key(&self) -> bool {
        (**self).needs_api_key()
    }
}

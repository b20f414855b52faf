//! Completions from a chat-completions inference server, with greedy decoding,
//! a content-addressed on-disk cache and retry with capped backoff.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::codebook::Codebook;
use crate::corpus::Message;
use crate::meta::sha256_hex;
use crate::parse::STOP_STRING;
use crate::prompt::{render_prompt, Exemplar, PromptTemplate};

pub const DEFAULT_MAX_NEW_TOKENS: u32 = 1024;
pub const DEFAULT_CONTEXT_TOKENS: u32 = 8096;
pub const FEW_SHOT_CONTEXT_TOKENS: u32 = 16384;

/// Rough client-side estimate used only for early warnings.
const CHARS_PER_TOKEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingConfig {
    pub temperature: f64,
    pub max_new_tokens: u32,
    pub stop: Vec<String>,
    pub max_context_tokens: u32,
    /// Refuse any temperature other than zero.
    pub greedy_only: bool,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        DecodingConfig {
            temperature: 0.0,
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            stop: vec![STOP_STRING.to_owned()],
            max_context_tokens: DEFAULT_CONTEXT_TOKENS,
            greedy_only: true,
        }
    }
}

impl DecodingConfig {
    pub fn few_shot() -> Self {
        DecodingConfig { max_context_tokens: FEW_SHOT_CONTEXT_TOKENS, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), InferError> {
        if self.greedy_only && self.temperature != 0.0 {
            return Err(InferError::InvalidConfig(format!(
                "temperature {} is not allowed with greedy decoding",
                self.temperature
            )));
        }
        if !(self.temperature >= 0.0) {
            return Err(InferError::InvalidConfig("temperature must be non-negative".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(InferError::InvalidConfig("max_new_tokens must be at least 1".into()));
        }
        Ok(())
    }

    /// Cuts `text` at the first stop string.
    pub fn truncate_at_stop<'a>(&self, text: &'a str) -> &'a str {
        self.stop
            .iter()
            .filter(|s| !s.is_empty())
            .filter_map(|s| text.find(s.as_str()))
            .min()
            .map_or(text, |i| &text[..i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InferError {
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("http error {status}: {body}")]
    HttpError { status: u16, body: String },
    #[error("request timed out")]
    TimeoutExceeded,
    #[error("prompt exceeds the model context: {0}")]
    ContextOverflow(String),
    #[error("malformed server response: {0}")]
    MalformedResponse(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cache failure: {0}")]
    Cache(String),
}

impl InferError {
    pub fn is_transient(&self) -> bool {
        match self {
            InferError::EndpointUnreachable(_) | InferError::TimeoutExceeded => true,
            InferError::HttpError { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
    pub latency_ms: u64,
}

pub trait CompletionBackend: Sync {
    fn model_id(&self) -> &str;
    fn complete(&self, prompt: &str, cfg: &DecodingConfig) -> Result<Completion, InferError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(8) }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n + 1`, after `n` failures.
    pub fn delay_after(&self, failures: u32) -> Duration {
        let factor = 1u32.checked_shl(failures.saturating_sub(1)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointConfig {
    /// Base URL up to and including the API version, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }
}

pub struct ChatClient {
    endpoint: EndpointConfig,
    http: reqwest::blocking::Client,
}

impl ChatClient {
    pub fn new(endpoint: EndpointConfig) -> Result<Self, InferError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(endpoint.timeout)
            .build()
            .map_err(|e| InferError::InvalidConfig(e.to_string()))?;
        Ok(ChatClient { endpoint, http })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint.base_url.trim_end_matches('/'))
    }

    fn request_once(&self, prompt: &str, cfg: &DecodingConfig) -> Result<String, InferError> {
        let body = json!({
            "model": self.endpoint.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_new_tokens,
            "stop": cfg.stop,
        });
        let mut req = self.http.post(self.url()).json(&body);
        if let Some(key) = &self.endpoint.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                InferError::TimeoutExceeded
            } else {
                InferError::EndpointUnreachable(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                InferError::TimeoutExceeded
            } else {
                InferError::MalformedResponse(e.to_string())
            }
        })?;
        if !(200..300).contains(&status) {
            if looks_like_context_overflow(&text) {
                return Err(InferError::ContextOverflow(text));
            }
            return Err(InferError::HttpError { status, body: text });
        }
        let v: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| InferError::MalformedResponse(e.to_string()))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| InferError::MalformedResponse("missing choices[0].message.content".into()))?;
        Ok(cfg.truncate_at_stop(content).to_owned())
    }
}

fn looks_like_context_overflow(body: &str) -> bool {
    let b = body.to_lowercase();
    ["context_length_exceeded", "maximum context length", "context length", "too many tokens"]
        .iter()
        .any(|p| b.contains(p))
}

impl CompletionBackend for ChatClient {
    fn model_id(&self) -> &str {
        &self.endpoint.model
    }

    fn complete(&self, prompt: &str, cfg: &DecodingConfig) -> Result<Completion, InferError> {
        cfg.validate()?;
        if prompt.is_empty() {
            return Err(InferError::InvalidConfig("empty prompt".into()));
        }
        let estimate = prompt.chars().count() / CHARS_PER_TOKEN;
        if estimate + cfg.max_new_tokens as usize > cfg.max_context_tokens as usize {
            log::warn!(
                "prompt is roughly {estimate} tokens, which may not fit a {}-token context",
                cfg.max_context_tokens
            );
        }
        let start = Instant::now();
        let policy = self.endpoint.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            match self.request_once(prompt, cfg) {
                Ok(text) => {
                    return Ok(Completion { text, attempts: attempt, latency_ms: start.elapsed().as_millis() as u64 })
                }
                Err(e) if e.is_transient() && attempt < policy.max_attempts.max(1) => {
                    let delay = policy.delay_after(attempt);
                    log::info!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Backend serving fixed completions by message text or by exact prompt;
/// used for offline runs and tests.
#[derive(Debug, Clone, Default)]
pub struct CannedBackend {
    pub model: String,
    by_suffix: Vec<(String, String)>,
    pub fallback: Option<String>,
    calls: std::sync::Arc<AtomicUsize>,
}

impl CannedBackend {
    pub fn new(model: impl Into<String>) -> Self {
        CannedBackend { model: model.into(), ..Default::default() }
    }

    /// Answers `completion` to any prompt ending with `suffix`.
    pub fn with(mut self, suffix: impl Into<String>, completion: impl Into<String>) -> Self {
        self.by_suffix.push((suffix.into(), completion.into()));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for CannedBackend {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, cfg: &DecodingConfig) -> Result<Completion, InferError> {
        cfg.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let text = self
            .by_suffix
            .iter()
            .find(|(s, _)| prompt.ends_with(s.as_str()))
            .map(|(_, c)| c.clone())
            .or_else(|| self.fallback.clone())
            .ok_or_else(|| InferError::HttpError { status: 404, body: "no canned completion".into() })?;
        Ok(Completion { text: cfg.truncate_at_stop(&text).to_owned(), attempts: 1, latency_ms: 0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub model: String,
    pub config: DecodingConfig,
    pub prompt: String,
    pub completion: String,
    pub latency_ms: u64,
    pub timestamp: u64,
}

/// Completions on disk under `<dir>/<key[..2]>/<key>.json`, where the key is
/// the sha256 of model id, decoding config and prompt.
#[derive(Debug)]
pub struct InferenceRecordCache {
    dir: PathBuf,
    write_lock: Mutex<()>,
}

impl InferenceRecordCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, InferError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| InferError::Cache(format!("{}: {e}", dir.display())))?;
        Ok(InferenceRecordCache { dir, write_lock: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(model: &str, cfg: &DecodingConfig, prompt: &str) -> String {
        let material = json!({"model": model, "config": cfg, "prompt": prompt});
        sha256_hex(material.to_string().as_bytes())
    }

    fn path_of(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    /// Hit only when model, config and full prompt all agree with the stored entry.
    pub fn get(&self, model: &str, cfg: &DecodingConfig, prompt: &str) -> Option<CacheEntry> {
        let key = Self::key(model, cfg, prompt);
        let text = fs::read_to_string(self.path_of(&key)).ok()?;
        let entry: CacheEntry = match serde_json::from_str(&text) {
            Ok(e) => e,
            Err(e) => {
                log::warn!("ignoring unreadable cache entry {key}: {e}");
                return None;
            }
        };
        if entry.model == model && &entry.config == cfg && entry.prompt == prompt {
            Some(entry)
        } else {
            log::warn!("cache key collision on {key}; treating as a miss");
            None
        }
    }

    pub fn put(&self, model: &str, cfg: &DecodingConfig, prompt: &str, c: &Completion) -> Result<CacheEntry, InferError> {
        let key = Self::key(model, cfg, prompt);
        let entry = CacheEntry {
            key: key.clone(),
            model: model.to_owned(),
            config: cfg.clone(),
            prompt: prompt.to_owned(),
            completion: c.text.clone(),
            latency_ms: c.latency_ms,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        let path = self.path_of(&key);
        let err = |e: std::io::Error| InferError::Cache(format!("{}: {e}", path.display()));
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        fs::create_dir_all(path.parent().expect("entry has a parent")).map_err(err)?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_string_pretty(&entry).expect("entry serializes")).map_err(err)?;
        fs::rename(&tmp, &path).map_err(err)?;
        Ok(entry)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CachedCompletion {
    pub completion: Completion,
    pub cached: bool,
}

/// Cache lookup, then backend call, then cache write.
pub fn complete_cached(
    backend: &dyn CompletionBackend,
    cache: Option<&InferenceRecordCache>,
    prompt: &str,
    cfg: &DecodingConfig,
) -> Result<CachedCompletion, InferError> {
    cfg.validate()?;
    if let Some(hit) = cache.and_then(|c| c.get(backend.model_id(), cfg, prompt)) {
        return Ok(CachedCompletion {
            completion: Completion { text: hit.completion, attempts: 0, latency_ms: hit.latency_ms },
            cached: true,
        });
    }
    let completion = backend.complete(prompt, cfg)?;
    if let Some(c) = cache {
        c.put(backend.model_id(), cfg, prompt, &completion)?;
    }
    Ok(CachedCompletion { completion, cached: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogLine {
    pub id: String,
    pub key: String,
    pub cached: bool,
    pub attempts: u32,
    pub latency_ms: u64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchResult {
    pub completions: BTreeMap<String, String>,
    pub failures: BTreeMap<String, InferError>,
    pub cache_hits: usize,
}

pub struct BatchSpec<'a> {
    pub template: &'a PromptTemplate,
    pub codebook: &'a Codebook,
    pub shots: &'a [Exemplar],
    pub config: &'a DecodingConfig,
    pub concurrency: usize,
}

/// Completes every message with at most `spec.concurrency` requests in
/// flight. Each completion is cached as soon as it arrives, so an interrupted
/// run resumes where it stopped. Per-record failures are collected, not fatal.
pub fn batch_run(
    messages: &[Message],
    spec: &BatchSpec<'_>,
    backend: &dyn CompletionBackend,
    cache: Option<&InferenceRecordCache>,
    run_log: Option<&mut (dyn Write + Send)>,
) -> Result<BatchResult, InferError> {
    spec.config.validate()?;
    if spec.concurrency == 0 {
        return Err(InferError::InvalidConfig("concurrency must be positive".into()));
    }
    let next = AtomicUsize::new(0);
    let result = Mutex::new(BatchResult::default());
    let log = Mutex::new(run_log);
    let workers = spec.concurrency.min(messages.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(m) = messages.get(i) else { break };
                let prompt = render_prompt(spec.template, spec.codebook, m, spec.shots);
                let res = complete_cached(backend, cache, &prompt, spec.config);
                let line = RunLogLine {
                    id: m.id.clone(),
                    key: InferenceRecordCache::key(backend.model_id(), spec.config, &prompt),
                    cached: matches!(&res, Ok(o) if o.cached),
                    attempts: res.as_ref().map_or(0, |o| o.completion.attempts),
                    latency_ms: res.as_ref().map_or(0, |o| o.completion.latency_ms),
                    error: res.as_ref().err().map(|e| e.to_string()),
                };
                {
                    let mut r = result.lock().unwrap_or_else(|p| p.into_inner());
                    match res {
                        Ok(o) => {
                            r.cache_hits += usize::from(o.cached);
                            r.completions.insert(m.id.clone(), o.completion.text);
                        }
                        Err(e) => {
                            log::warn!("record {}: {e}", m.id);
                            r.failures.insert(m.id.clone(), e);
                        }
                    }
                }
                if let Some(w) = log.lock().unwrap_or_else(|p| p.into_inner()).as_mut() {
                    let _ = writeln!(w, "{}", serde_json::to_string(&line).expect("log line serializes"));
                }
            });
        }
    });
    Ok(result.into_inner().unwrap_or_else(|p| p.into_inner()))
}

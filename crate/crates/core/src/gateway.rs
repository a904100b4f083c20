//! Chat-completion and embedding access with a durable replay cache,
//! scripted offline responders and reply parsing.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::Document;
use crate::prompting;
use crate::text::{canonical, last_term_match, lexical_terms, sentences, truncate_tokens};

pub const BASE_URL_ENV: &str = "EVENTCAST_BASE_URL";
pub const API_KEY_ENV: &str = "EVENTCAST_API_KEY";
const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("replay cache has no entry for key {key}")]
    StrictReplay { key: String },
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("cache file {}: {message}", path.display())]
    Cache { path: PathBuf, message: String },
    #[error("gateway configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        ChatRequest {
            model_id: model_id.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            seed: 0,
            max_output_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn for_chat(req: &ChatRequest) -> Self {
        Self::digest(&serde_json::json!({
            "kind": "chat",
            "model_id": req.model_id,
            "prompt": req.prompt,
            "temperature": req.temperature,
            "seed": req.seed,
            "max_output_tokens": req.max_output_tokens,
        }))
    }

    pub fn for_embedding(model_id: &str, text: &str) -> Self {
        Self::digest(&serde_json::json!({
            "kind": "embedding",
            "model_id": model_id,
            "text": text,
        }))
    }

    fn digest(v: &serde_json::Value) -> Self {
        let bytes = serde_json::to_vec(v).expect("json values serialize");
        CacheKey(hex::encode(Sha256::digest(&bytes)))
    }
}

impl std::fmt::Display for CacheKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum CacheValue {
    Chat(String),
    Embedding(Vec<f64>),
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheRecord {
    key: CacheKey,
    kind: String,
    request: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vector: Option<Vec<f64>>,
    timestamp: String,
}

/// In-memory map backed by an optional append-only JSONL file. When a key
/// appears on several lines the last one wins.
pub struct ReplayCache {
    path: Option<PathBuf>,
    /// value plus whether it was loaded from disk
    entries: RwLock<HashMap<CacheKey, (CacheValue, bool)>>,
    writer: Mutex<Option<BufWriter<File>>>,
}

impl ReplayCache {
    pub fn in_memory() -> Self {
        ReplayCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    pub fn open(path: &Path, must_exist: bool) -> Result<Self, GatewayError> {
        let cache_err = |message: String| GatewayError::Cache {
            path: path.to_owned(),
            message,
        };
        let mut entries = HashMap::new();
        match File::open(path) {
            Ok(f) => {
                for (i, line) in BufReader::new(f).lines().enumerate() {
                    let line = line.map_err(|e| cache_err(e.to_string()))?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: CacheRecord = serde_json::from_str(&line)
                        .map_err(|e| cache_err(format!("line {}: {e}", i + 1)))?;
                    let value = match (rec.reply, rec.vector) {
                        (Some(r), _) => CacheValue::Chat(r),
                        (None, Some(v)) => CacheValue::Embedding(v),
                        (None, None) => {
                            return Err(cache_err(format!("line {}: record has no value", i + 1)))
                        }
                    };
                    entries.insert(rec.key, (value, true));
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && !must_exist => {}
            Err(e) => return Err(cache_err(e.to_string())),
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| cache_err(e.to_string()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| cache_err(e.to_string()))?;
        Ok(ReplayCache {
            path: Some(path.to_owned()),
            entries: RwLock::new(entries),
            writer: Mutex::new(Some(BufWriter::new(file))),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, key: &CacheKey) -> Option<(CacheValue, bool)> {
        self.entries
            .read()
            .expect("cache lock poisoned")
            .get(key)
            .cloned()
    }

    fn insert(
        &self,
        key: CacheKey,
        request: serde_json::Value,
        value: CacheValue,
    ) -> Result<(), GatewayError> {
        let mut writer = self.writer.lock().expect("cache writer poisoned");
        if let Some(w) = writer.as_mut() {
            let (reply, vector) = match &value {
                CacheValue::Chat(r) => (Some(r.clone()), None),
                CacheValue::Embedding(v) => (None, Some(v.clone())),
            };
            let rec = CacheRecord {
                key: key.clone(),
                kind: if reply.is_some() { "chat" } else { "embedding" }.to_owned(),
                request,
                reply,
                vector,
                timestamp: chrono::Utc::now().to_rfc3339(),
            };
            let line = serde_json::to_string(&rec).expect("cache records serialize");
            let path = self.path.clone().unwrap_or_default();
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| GatewayError::Cache {
                    path,
                    message: e.to_string(),
                })?;
        }
        self.entries
            .write()
            .expect("cache lock poisoned")
            .insert(key, (value, false));
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TransportError {
    pub transient: bool,
    pub message: String,
}

pub trait Backend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError>;
    fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatewayMode {
    /// Always calls the endpoint; replies are still appended to the cache.
    Live,
    /// Serves cache hits, calls the endpoint on misses.
    Record,
    /// Cache only; a miss is an error.
    Replay,
    /// Scripted responder on misses; never touches the network.
    Scripted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScriptPolicy {
    /// Picks the option whose name appears latest in the rendered history.
    Recency,
    FixedLabel { label: char },
    /// Returns the candidate list of an entity-filter prompt unchanged.
    EchoCandidates,
    /// Exact prompt match first, then the first key contained in the prompt.
    ScriptedMap { replies: BTreeMap<String, String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub mode: GatewayMode,
    pub model_id: String,
    pub embedding_model_id: String,
    pub seed: u64,
    pub max_output_tokens: u32,
    pub cache_path: Option<PathBuf>,
    pub policy: ScriptPolicy,
    pub max_in_flight: usize,
    pub requests_per_second: Option<f64>,
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub timeout_secs: u64,
    pub summary_max_tokens: usize,
    /// Sentences kept by the scripted summarizer.
    pub summary_sentences: usize,
    /// Dimensionality of the scripted hash embedder.
    pub embedding_dim: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            mode: GatewayMode::Scripted,
            model_id: "gpt-3.5-turbo".into(),
            embedding_model_id: "text-embedding-3-small".into(),
            seed: 0,
            max_output_tokens: 256,
            cache_path: None,
            policy: ScriptPolicy::Recency,
            max_in_flight: 4,
            requests_per_second: None,
            max_attempts: 5,
            backoff_ms: 500,
            timeout_secs: 120,
            summary_max_tokens: 120,
            summary_sentences: 2,
            embedding_dim: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub text: String,
    /// Served from a cache file that existed when the gateway was opened.
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FilterOutcome {
    /// Indices into the candidate list, in candidate order.
    pub selected: Vec<usize>,
    pub parse_failed: bool,
}

pub struct Gateway {
    config: GatewayConfig,
    backend: Option<Box<dyn Backend>>,
    cache: ReplayCache,
    limiter: Limiter,
    backend_calls: AtomicU64,
}

impl Gateway {
    pub fn from_config(config: GatewayConfig) -> Result<Self, GatewayError> {
        let backend: Option<Box<dyn Backend>> = match config.mode {
            GatewayMode::Live | GatewayMode::Record => {
                let base = std::env::var(BASE_URL_ENV).unwrap_or_else(|_| DEFAULT_BASE_URL.into());
                let key = std::env::var(API_KEY_ENV).ok();
                Some(Box::new(HttpBackend::new(
                    base,
                    key,
                    Duration::from_secs(config.timeout_secs),
                )))
            }
            GatewayMode::Replay => None,
            GatewayMode::Scripted => Some(Box::new(ScriptedResponder::new(
                config.policy.clone(),
                config.summary_sentences,
                config.embedding_dim,
            ))),
        };
        Self::with_backend(config, backend)
    }

    /// Uses a caller-supplied backend in place of the one implied by the mode.
    pub fn with_backend(
        config: GatewayConfig,
        backend: Option<Box<dyn Backend>>,
    ) -> Result<Self, GatewayError> {
        let cache = match (&config.cache_path, config.mode) {
            (None, GatewayMode::Replay) => {
                return Err(GatewayError::Config("replay mode needs cache_path".into()))
            }
            (Some(p), mode) => ReplayCache::open(p, mode == GatewayMode::Replay)?,
            (None, _) => ReplayCache::in_memory(),
        };
        if config.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be positive".into()));
        }
        let limiter = Limiter::new(config.max_in_flight, config.requests_per_second);
        Ok(Gateway {
            config,
            backend,
            cache,
            limiter,
            backend_calls: AtomicU64::new(0),
        })
    }

    pub fn scripted(policy: ScriptPolicy) -> Self {
        Self::from_config(GatewayConfig {
            policy,
            ..GatewayConfig::default()
        })
        .expect("scripted in-memory gateway always builds")
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn mode(&self) -> GatewayMode {
        self.config.mode
    }

    /// Calls that reached the backend (network or scripted responder).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls.load(Ordering::Relaxed)
    }

    pub fn request(&self, prompt: impl Into<String>) -> ChatRequest {
        ChatRequest {
            seed: self.config.seed,
            max_output_tokens: self.config.max_output_tokens,
            ..ChatRequest::new(self.config.model_id.clone(), prompt)
        }
    }

    pub fn chat_complete(&self, req: &ChatRequest) -> Result<Reply, GatewayError> {
        let key = CacheKey::for_chat(req);
        if self.config.mode != GatewayMode::Live {
            if let Some((CacheValue::Chat(text), preloaded)) = self.cache.get(&key) {
                return Ok(Reply {
                    text,
                    cache_hit: preloaded,
                });
            }
        }
        let backend = match (&self.backend, self.config.mode) {
            (Some(b), m) if m != GatewayMode::Replay => b,
            _ => return Err(GatewayError::StrictReplay { key: key.0 }),
        };
        let text = self.with_retries(|| backend.complete(req))?;
        self.cache.insert(
            key,
            serde_json::to_value(req).expect("requests serialize"),
            CacheValue::Chat(text.clone()),
        )?;
        Ok(Reply {
            text,
            cache_hit: false,
        })
    }

    /// Completes `prompt` with the configured model settings.
    pub fn complete(&self, prompt: &str) -> Result<Reply, GatewayError> {
        self.chat_complete(&self.request(prompt))
    }

    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, GatewayError> {
        let model = &self.config.embedding_model_id;
        let keys: Vec<CacheKey> = texts.iter().map(|t| CacheKey::for_embedding(model, t)).collect();
        let mut out: Vec<Option<Vec<f64>>> = keys
            .iter()
            .map(|k| match self.cache.get(k) {
                Some((CacheValue::Embedding(v), _)) if self.config.mode != GatewayMode::Live => {
                    Some(v)
                }
                _ => None,
            })
            .collect();
        let mut missing: Vec<usize> = Vec::new();
        let mut seen: HashMap<&CacheKey, ()> = HashMap::new();
        for (i, v) in out.iter().enumerate() {
            if v.is_none() && seen.insert(&keys[i], ()).is_none() {
                missing.push(i);
            }
        }
        if !missing.is_empty() {
            let backend = match (&self.backend, self.config.mode) {
                (Some(b), m) if m != GatewayMode::Replay => b,
                _ => {
                    return Err(GatewayError::StrictReplay {
                        key: keys[missing[0]].0.clone(),
                    })
                }
            };
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self.with_retries(|| backend.embed(model, &batch))?;
            if vectors.len() != batch.len() {
                return Err(GatewayError::Transport {
                    attempts: 1,
                    message: format!("expected {} vectors, got {}", batch.len(), vectors.len()),
                });
            }
            let mut fresh: HashMap<CacheKey, Vec<f64>> = HashMap::new();
            for (&i, v) in missing.iter().zip(vectors) {
                self.cache.insert(
                    keys[i].clone(),
                    serde_json::json!({ "model_id": model, "text": texts[i] }),
                    CacheValue::Embedding(v.clone()),
                )?;
                fresh.insert(keys[i].clone(), v);
            }
            for (i, slot) in out.iter_mut().enumerate() {
                if slot.is_none() {
                    *slot = fresh.get(&keys[i]).cloned();
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("every slot filled")).collect())
    }

    /// Stored summary if the document has one, otherwise a model summary
    /// truncated to the configured token cap.
    pub fn summarize_document(&self, doc: &Document) -> Result<String, GatewayError> {
        if let Some(s) = &doc.summary {
            return Ok(s.clone());
        }
        if doc.body.trim().is_empty() {
            tracing::warn!(doc_id = %doc.doc_id, "empty document body, summary left empty");
            return Ok(String::new());
        }
        let reply = self.complete(&prompting::summarization_prompt(doc))?;
        Ok(truncate_tokens(reply.text.trim(), self.config.summary_max_tokens))
    }

    pub fn filter_candidate_entities(
        &self,
        subject: &str,
        candidates: &[String],
    ) -> Result<FilterOutcome, GatewayError> {
        let prompt = match prompting::render_entity_filter_prompt(subject, candidates) {
            Ok(p) => p,
            Err(_) => return Ok(FilterOutcome::default()),
        };
        let reply = self.complete(&prompt)?;
        Ok(match_filter_reply(&reply.text, candidates))
    }

    fn with_retries<T>(
        &self,
        mut call: impl FnMut() -> Result<T, TransportError>,
    ) -> Result<T, GatewayError> {
        let network = matches!(self.config.mode, GatewayMode::Live | GatewayMode::Record);
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            let result = if network {
                let _permit = self.limiter.acquire();
                call()
            } else {
                call()
            };
            self.backend_calls.fetch_add(1, Ordering::Relaxed);
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.transient && attempt < attempts => {
                    tracing::warn!(attempt, error = %e.message, "transient transport error, retrying");
                    let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    std::thread::sleep(Duration::from_millis(delay));
                    last = e.message;
                }
                Err(e) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt,
                        message: e.message,
                    })
                }
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last,
        })
    }
}

/// Maps a filter reply onto the candidate list. A reply that names no
/// candidate at all (other than an explicit empty list) is a parse failure
/// and selects everything.
pub fn match_filter_reply(reply: &str, candidates: &[String]) -> FilterOutcome {
    let items = match prompting::parse_entity_list(reply) {
        Some(items) => items,
        None => {
            return FilterOutcome {
                selected: (0..candidates.len()).collect(),
                parse_failed: true,
            }
        }
    };
    if items.is_empty() {
        return FilterOutcome::default();
    }
    let wanted: std::collections::HashSet<String> = items.iter().map(|s| canonical(s)).collect();
    let selected: Vec<usize> = candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| wanted.contains(&canonical(c)))
        .map(|(i, _)| i)
        .collect();
    if selected.is_empty() {
        FilterOutcome {
            selected: (0..candidates.len()).collect(),
            parse_failed: true,
        }
    } else {
        FilterOutcome {
            selected,
            parse_failed: false,
        }
    }
}

struct Limiter {
    max_in_flight: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    bucket: Option<Mutex<Bucket>>,
}

struct Bucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("limiter poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

impl Limiter {
    fn new(max_in_flight: usize, rate: Option<f64>) -> Self {
        Limiter {
            max_in_flight,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            bucket: rate.filter(|r| *r > 0.0).map(|rate| {
                Mutex::new(Bucket {
                    rate,
                    capacity: rate.max(1.0),
                    tokens: rate.max(1.0),
                    last: Instant::now(),
                })
            }),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        if let Some(bucket) = &self.bucket {
            loop {
                let wait = {
                    let mut b = bucket.lock().expect("limiter poisoned");
                    let now = Instant::now();
                    b.tokens = (b.tokens + now.duration_since(b.last).as_secs_f64() * b.rate)
                        .min(b.capacity);
                    b.last = now;
                    if b.tokens >= 1.0 {
                        b.tokens -= 1.0;
                        None
                    } else {
                        Some(Duration::from_secs_f64((1.0 - b.tokens) / b.rate))
                    }
                };
                match wait {
                    None => break,
                    Some(d) => std::thread::sleep(d),
                }
            }
        }
        let mut n = self.in_flight.lock().expect("limiter poisoned");
        while *n >= self.max_in_flight {
            n = self.freed.wait(n).expect("limiter poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

/// Blocking client for the common chat-completion and embedding HTTP shape.
pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: String, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        HttpBackend {
            agent: ureq::Agent::new_with_config(config),
            base_url: base_url.trim_end_matches('/').to_owned(),
            api_key,
        }
    }

    fn post(&self, path: &str, body: serde_json::Value) -> Result<serde_json::Value, TransportError> {
        let url = format!("{}/{path}", self.base_url);
        let mut req = self.agent.post(&url);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| TransportError {
            transient: true,
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(TransportError {
                transient: true,
                message: format!("HTTP {status} from {url}"),
            });
        }
        if status >= 400 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(TransportError {
                transient: false,
                message: format!("HTTP {status} from {url}: {detail}"),
            });
        }
        resp.body_mut()
            .read_json::<serde_json::Value>()
            .map_err(|e| TransportError {
                transient: false,
                message: format!("bad JSON from {url}: {e}"),
            })
    }
}

impl Backend for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        let body = serde_json::json!({
            "model": req.model_id,
            "messages": [{ "role": "user", "content": req.prompt }],
            "temperature": req.temperature,
            "seed": req.seed,
            "max_tokens": req.max_output_tokens,
        });
        let v = self.post("chat/completions", body)?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| TransportError {
                transient: false,
                message: "reply has no choices[0].message.content".into(),
            })
    }

    fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
        let v = self.post(
            "embeddings",
            serde_json::json!({ "model": model_id, "input": texts }),
        )?;
        let bad = || TransportError {
            transient: false,
            message: "reply has no data[].embedding".into(),
        };
        v["data"]
            .as_array()
            .ok_or_else(bad)?
            .iter()
            .map(|d| {
                d["embedding"]
                    .as_array()
                    .ok_or_else(bad)?
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(bad))
                    .collect()
            })
            .collect()
    }
}

/// Offline responder: a pure function of the prompt text.
#[derive(Debug, Clone)]
pub struct ScriptedResponder {
    pub policy: ScriptPolicy,
    pub summary_sentences: usize,
    pub embedding_dim: usize,
}

impl ScriptedResponder {
    pub fn new(policy: ScriptPolicy, summary_sentences: usize, embedding_dim: usize) -> Self {
        ScriptedResponder {
            policy,
            summary_sentences,
            embedding_dim: embedding_dim.max(1),
        }
    }

    pub fn respond(&self, prompt: &str) -> String {
        if let ScriptPolicy::ScriptedMap { replies } = &self.policy {
            if let Some(r) = replies.get(prompt) {
                return r.clone();
            }
            if let Some((_, r)) = replies.iter().find(|(k, _)| prompt.contains(k.as_str())) {
                return r.clone();
            }
        }
        if prompt.starts_with(prompting::ENTITY_FILTER_OPENING) {
            return prompting::candidate_block(prompt).unwrap_or_default();
        }
        if prompt.starts_with(prompting::SUMMARY_OPENING) {
            let body = prompting::summary_source(prompt).unwrap_or_default();
            return sentences(body)
                .into_iter()
                .take(self.summary_sentences)
                .collect::<Vec<_>>()
                .join(" ");
        }
        if prompt.starts_with(prompting::DISTRACTOR_OPENING) {
            return scripted_distractors(prompt);
        }
        match &self.policy {
            ScriptPolicy::Recency => recency_choice(prompt).to_string(),
            ScriptPolicy::FixedLabel { label } => label.to_string(),
            ScriptPolicy::EchoCandidates | ScriptPolicy::ScriptedMap { .. } => String::new(),
        }
    }
}

impl Backend for ScriptedResponder {
    fn complete(&self, req: &ChatRequest) -> Result<String, TransportError> {
        Ok(self.respond(&req.prompt))
    }

    fn embed(&self, _model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
        Ok(texts.iter().map(|t| hash_embed(t, self.embedding_dim)).collect())
    }
}

/// Signed feature hashing of lexical terms, L2-normalized. Text without terms
/// maps to the zero vector.
pub fn hash_embed(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for term in lexical_terms(text) {
        let h = Sha256::digest(term.as_bytes());
        let idx = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) % dim as u64;
        let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
        v[idx as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

fn scripted_distractors(prompt: &str) -> String {
    const SYL: [&str; 8] = ["zor", "vak", "mel", "tun", "qir", "dof", "hax", "pel"];
    let h = Sha256::digest(prompt.as_bytes());
    (0..5)
        .map(|i| {
            let a = SYL[(h[2 * i] % 8) as usize];
            let b = SYL[(h[2 * i + 1] % 8) as usize];
            format!("U{a}{b} Group {}", i + 1)
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Label of the option mentioned on the latest day of the rendered history,
/// later lines and later positions breaking ties. Falls back to `A`.
pub fn recency_choice(prompt: &str) -> char {
    let lines: Vec<&str> = prompt.lines().collect();
    let Some(query_at) = lines.iter().rposition(|l| l.trim() == "[Query]") else {
        return 'A';
    };
    let Some(options_at) = lines[query_at..]
        .iter()
        .position(|l| l.trim() == "[Options]")
        .map(|p| p + query_at)
    else {
        return 'A';
    };
    let options: Vec<(char, Vec<String>)> = lines[options_at + 1..]
        .iter()
        .map_while(|l| prompting::parse_option_line(l))
        .map(|(label, text)| (label, lexical_terms(text)))
        .collect();

    let mut day = 0u32;
    let mut best: Option<((u32, usize, usize), char)> = None;
    // skip the query line itself
    for (i, line) in lines.iter().enumerate().take(options_at).skip(query_at + 2) {
        let line = line.trim();
        if let Some(d) = line
            .strip_prefix("[Date]")
            .and_then(|r| r.strip_suffix(':'))
            .and_then(|r| r.trim().parse().ok())
        {
            day = d;
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            continue;
        }
        let line_day = prompting::quadruple_day(line).unwrap_or(day);
        let terms = lexical_terms(line);
        for (label, needle) in &options {
            if let Some(pos) = last_term_match(&terms, needle) {
                let key = (line_day, i, pos);
                if best.is_none_or(|(k, _)| key > k) {
                    best = Some((key, *label));
                }
            }
        }
    }
    best.map(|(_, l)| l).unwrap_or('A')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Choice {
    Label(char),
    Invalid,
}

impl Choice {
    pub fn label(self) -> Option<char> {
        match self {
            Choice::Label(c) => Some(c),
            Choice::Invalid => None,
        }
    }
}

impl From<Choice> for String {
    fn from(c: Choice) -> String {
        match c {
            Choice::Label(l) => l.to_string(),
            Choice::Invalid => "invalid".into(),
        }
    }
}

impl TryFrom<String> for Choice {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        match s.as_str() {
            "invalid" => Ok(Choice::Invalid),
            l if l.len() == 1 && l.as_bytes()[0].is_ascii_uppercase() => {
                Ok(Choice::Label(l.as_bytes()[0] as char))
            }
            _ => Err(format!("bad choice {s:?}")),
        }
    }
}

/// Reads the model's answer. A standalone label letter wins; otherwise the
/// reply must name exactly one option.
pub fn parse_choice(reply: &str, options: &[String]) -> Choice {
    let labels: Vec<char> = (0..options.len().min(26)).map(|i| (b'A' + i as u8) as char).collect();
    let chars: Vec<char> = reply.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        if !labels.contains(c) {
            continue;
        }
        let before = i == 0 || !chars[i - 1].is_alphanumeric();
        let after = i + 1 == chars.len() || !chars[i + 1].is_alphanumeric();
        if before && after {
            return Choice::Label(*c);
        }
    }
    let terms = lexical_terms(reply);
    let mut hit = None;
    for (i, opt) in options.iter().enumerate() {
        if last_term_match(&terms, &lexical_terms(opt)).is_some() {
            if hit.is_some() {
                return Choice::Invalid;
            }
            hit = Some(labels[i]);
        }
    }
    hit.map(Choice::Label).unwrap_or(Choice::Invalid)
}

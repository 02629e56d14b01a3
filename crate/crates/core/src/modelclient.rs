//! Completion and chat endpoints behind a retrying, rate-limited HTTP client
//! and a content-addressed response cache, plus a deterministic mock model.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embed::subtokens;
use crate::prompt::{self, Prompt};

pub const API_KEY_ENV: &str = "DRIFTBENCH_API_KEY";
pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 256;
pub const DEFAULT_MAX_ATTEMPTS: u32 = 5;
pub const DEFAULT_BACKOFF_BASE: Duration = Duration::from_secs(1);
pub const BACKOFF_FACTOR: u32 = 2;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("endpoint failed after {attempts} attempts: {message}")]
    Endpoint { attempts: u32, message: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptBody {
    Text(String),
    Chat { system: Option<String>, user: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: PromptBody,
    pub max_output_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop: Vec<String>,
}

impl CompletionRequest {
    pub fn text(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        CompletionRequest {
            model: model.into(),
            prompt: PromptBody::Text(prompt.into()),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            temperature: 0.0,
            stop: Vec::new(),
        }
    }

    /// Chat prompts carry a system message; completion prompts do not.
    pub fn from_prompt(model: impl Into<String>, p: &Prompt) -> Self {
        let mut req = Self::text(model, p.rendered.clone());
        if p.instruction.style == prompt::Style::Chat {
            req.prompt = PromptBody::Chat {
                system: p.system_message.clone(),
                user: p.rendered.clone(),
            };
        }
        req
    }

    /// SHA-256 over the model id, the prompt and the decoding parameters.
    pub fn cache_key(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub usage: Option<TokenUsage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub response: String,
    pub timestamp: u64,
    pub usage: Option<TokenUsage>,
}

/// Directory of `<key>.json` files. Writes go through a temporary file and a
/// rename, so readers never see a partial entry and the last writer wins.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| ModelError::Cache {
            path: dir.clone(),
            source,
        })?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        let bytes = fs::read(self.path(key)).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(e) if e.key == key => Some(e),
            _ => {
                warn!("ignoring unreadable cache entry {key}");
                None
            }
        }
    }

    pub fn put(&self, entry: &CacheEntry) -> Result<()> {
        let target = self.path(&entry.key);
        let io = |source| ModelError::Cache {
            path: target.clone(),
            source,
        };
        let mut tmp = tempfile_in(&self.dir, &entry.key).map_err(io)?;
        tmp.1
            .write_all(&serde_json::to_vec_pretty(entry).expect("entry serializes"))
            .map_err(io)?;
        drop(tmp.1);
        fs::rename(&tmp.0, &target).map_err(io)
    }
}

fn tempfile_in(dir: &Path, key: &str) -> std::io::Result<(PathBuf, fs::File)> {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    let path = dir.join(format!(".{key}.{}.{n}.tmp", std::process::id()));
    let f = fs::File::create(&path)?;
    Ok((path, f))
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

pub trait ModelBackend: Sync + Send {
    fn id(&self) -> String;
    fn complete(&self, request: &CompletionRequest) -> Result<ModelResponse>;
}

/// Enforces a minimum spacing between request starts.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(rpm: u32) -> Self {
        RateLimiter {
            interval: if rpm == 0 {
                Duration::ZERO
            } else {
                Duration::from_secs(60) / rpm
            },
            next: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default)]
    pub requests_per_minute: u32,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_key_env() -> String {
    API_KEY_ENV.to_string()
}
fn default_attempts() -> u32 {
    DEFAULT_MAX_ATTEMPTS
}
fn default_backoff_ms() -> u64 {
    DEFAULT_BACKOFF_BASE.as_millis() as u64
}
fn default_timeout_s() -> u64 {
    120
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        EndpointConfig {
            url: url.into(),
            api_key_env: default_key_env(),
            requests_per_minute: 0,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            backoff_base_ms: default_backoff_ms(),
            timeout_s: default_timeout_s(),
        }
    }
}

enum Failure {
    Auth(String),
    RateLimited,
    Transient(String),
    /// Client errors other than auth: retrying cannot help.
    Rejected(String),
}

/// JSON-over-HTTP client for completion (`prompt`) and chat (`messages`)
/// endpoints.
pub struct HttpBackend {
    config: EndpointConfig,
    agent: ureq::Agent,
    limiter: RateLimiter,
    attempts: AtomicU64,
}

impl HttpBackend {
    pub fn new(config: EndpointConfig) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_s))
            .build();
        let limiter = RateLimiter::per_minute(config.requests_per_minute);
        HttpBackend {
            config,
            agent,
            limiter,
            attempts: AtomicU64::new(0),
        }
    }

    /// HTTP requests sent so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::Relaxed)
    }

    fn body(request: &CompletionRequest) -> serde_json::Value {
        let mut body = serde_json::json!({
            "model": request.model,
            "max_tokens": request.max_output_tokens,
            "temperature": request.temperature,
        });
        if !request.stop.is_empty() {
            body["stop"] = serde_json::json!(request.stop);
        }
        match &request.prompt {
            PromptBody::Text(t) => body["prompt"] = serde_json::json!(t),
            PromptBody::Chat { system, user } => {
                let mut messages = Vec::new();
                if let Some(s) = system {
                    messages.push(serde_json::json!({"role": "system", "content": s}));
                }
                messages.push(serde_json::json!({"role": "user", "content": user}));
                body["messages"] = serde_json::json!(messages);
            }
        }
        body
    }

    fn attempt(&self, key: &str, body: &serde_json::Value) -> std::result::Result<serde_json::Value, Failure> {
        self.limiter.acquire();
        self.attempts.fetch_add(1, Ordering::Relaxed);
        let resp = self
            .agent
            .post(&self.config.url)
            .set("Authorization", &format!("Bearer {key}"))
            .send_json(body.clone());
        match resp {
            Ok(r) => r.into_json().map_err(|e| Failure::Transient(e.to_string())),
            Err(ureq::Error::Status(code @ (401 | 403), r)) => {
                Err(Failure::Auth(format!("HTTP {code}: {}", r.into_string().unwrap_or_default())))
            }
            Err(ureq::Error::Status(429, _)) => Err(Failure::RateLimited),
            Err(ureq::Error::Status(code, r)) if code >= 500 => {
                Err(Failure::Transient(format!("HTTP {code}: {}", r.into_string().unwrap_or_default())))
            }
            Err(ureq::Error::Status(code, r)) => {
                Err(Failure::Rejected(format!("HTTP {code}: {}", r.into_string().unwrap_or_default())))
            }
            Err(e) => Err(Failure::Transient(e.to_string())),
        }
    }

    fn parse(value: &serde_json::Value) -> Result<ModelResponse> {
        let choice = value
            .get("choices")
            .and_then(|c| c.get(0))
            .ok_or_else(|| ModelError::Malformed("no choices".into()))?;
        let text = choice
            .get("text")
            .or_else(|| choice.get("message").and_then(|m| m.get("content")))
            .and_then(|t| t.as_str())
            .ok_or_else(|| ModelError::Malformed("choice has no text".into()))?;
        let usage = value.get("usage").and_then(|u| serde_json::from_value(u.clone()).ok());
        Ok(ModelResponse {
            text: text.to_string(),
            usage,
        })
    }
}

impl ModelBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.config.url)
    }

    fn complete(&self, request: &CompletionRequest) -> Result<ModelResponse> {
        let key = std::env::var(&self.config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| ModelError::Auth(format!("{} is not set", self.config.api_key_env)))?;
        let body = Self::body(request);
        let max = self.config.max_attempts.max(1);
        let mut delay = Duration::from_millis(self.config.backoff_base_ms);
        let mut last = Failure::Transient(String::new());
        for attempt in 1..=max {
            match self.attempt(&key, &body) {
                Ok(v) => {
                    debug!("request succeeded on attempt {attempt}");
                    return Self::parse(&v);
                }
                Err(Failure::Auth(m)) => return Err(ModelError::Auth(m)),
                Err(Failure::Rejected(message)) => return Err(ModelError::Endpoint { attempts: attempt, message }),
                Err(f) => {
                    match &f {
                        Failure::RateLimited => warn!("attempt {attempt}/{max}: rate limited"),
                        Failure::Transient(m) => warn!("attempt {attempt}/{max}: {m}"),
                        Failure::Auth(_) | Failure::Rejected(_) => unreachable!(),
                    }
                    last = f;
                }
            }
            if attempt < max {
                std::thread::sleep(delay);
                delay *= BACKOFF_FACTOR;
            }
        }
        Err(match last {
            Failure::RateLimited => ModelError::RateLimited { attempts: max },
            Failure::Transient(message) | Failure::Auth(message) | Failure::Rejected(message) => {
                ModelError::Endpoint { attempts: max, message }
            }
        })
    }
}

/// Offline stand-in for a model: recovers the demonstrations from the
/// rendered prompt and answers with the one whose input shares the most
/// subtokens with the query. No demonstrations, no answer.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

fn token_set(s: &str) -> HashSet<String> {
    subtokens(s).into_iter().collect()
}

fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

pub fn mock_complete(request: &CompletionRequest) -> String {
    let parsed = match &request.prompt {
        PromptBody::Text(t) => prompt::parse_rendered(None, t),
        PromptBody::Chat { system, user } => prompt::parse_rendered(system.as_deref(), user),
    };
    let Some(p) = parsed else {
        return String::new();
    };
    let query = token_set(&p.query);
    let mut best: Option<(f64, &prompt::Demonstration)> = None;
    for d in &p.demonstrations {
        let s = jaccard(&query, &token_set(d.input(p.task)));
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, d));
        }
    }
    best.map(|(_, d)| d.answer(p.task).to_string()).unwrap_or_default()
}

impl ModelBackend for MockBackend {
    fn id(&self) -> String {
        "mock".into()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<ModelResponse> {
        Ok(ModelResponse {
            text: mock_complete(request),
            usage: None,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
}

/// A backend with an optional response cache in front of it.
pub struct ModelClient {
    backend: Box<dyn ModelBackend>,
    cache: Option<ResponseCache>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ModelClient {
    pub fn new(backend: Box<dyn ModelBackend>, cache: Option<ResponseCache>) -> Self {
        ModelClient {
            backend,
            cache,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn backend_id(&self) -> String {
        self.backend.id()
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String> {
        let key = request.cache_key();
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.response);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let resp = self.backend.complete(request)?;
        if let Some(cache) = &self.cache {
            cache.put(&CacheEntry {
                key,
                response: resp.text.clone(),
                timestamp: unix_now(),
                usage: resp.usage,
            })?;
        }
        Ok(resp.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{render_prompt, variant, Demonstration, RenderOptions, Style, Task};

    fn demos() -> Vec<Demonstration> {
        vec![
            Demonstration::new("parse json config file", "function parseConfig(p) { return JSON.parse(p); }"),
            Demonstration::new("sum array values", "function sumValues(xs) { return xs.reduce((a, b) => a + b, 0); }"),
        ]
    }

    #[test]
    fn mock_copies_matching_demonstration() {
        for style in [Style::Completion, Style::Chat] {
            let instr = variant(Task::Summarize, style, 0).unwrap();
            let p = render_prompt(instr, &demos(), &demos()[1].code, &RenderOptions::default()).unwrap();
            let req = CompletionRequest::from_prompt("m", &p);
            assert_eq!(mock_complete(&req), "sum array values");
            assert_eq!(mock_complete(&req), mock_complete(&req));
        }
        let instr = variant(Task::Generate, Style::Completion, 1).unwrap();
        let p = render_prompt(instr, &demos(), "parse the json file", &RenderOptions::default()).unwrap();
        assert_eq!(mock_complete(&CompletionRequest::from_prompt("m", &p)), demos()[0].code);
    }

    #[test]
    fn mock_without_demonstrations_is_silent() {
        let instr = variant(Task::Summarize, Style::Completion, 0).unwrap();
        let p = render_prompt(instr, &[], "var a = 1;", &RenderOptions::default()).unwrap();
        assert_eq!(mock_complete(&CompletionRequest::from_prompt("m", &p)), "");
        assert_eq!(mock_complete(&CompletionRequest::text("m", "free text")), "");
    }

    #[test]
    fn cache_key_depends_on_parameters() {
        let a = CompletionRequest::text("m", "p");
        let mut b = a.clone();
        assert_eq!(a.cache_key(), b.cache_key());
        b.temperature = 0.5;
        assert_ne!(a.cache_key(), b.cache_key());
        assert_eq!(a.cache_key().len(), 64);
    }

    #[test]
    fn cache_round_trip_and_hit_accounting() {
        let dir = tempfile::tempdir().unwrap();
        let client = ModelClient::new(Box::new(MockBackend), Some(ResponseCache::open(dir.path()).unwrap()));
        let instr = variant(Task::Summarize, Style::Completion, 0).unwrap();
        let p = render_prompt(instr, &demos(), &demos()[0].code, &RenderOptions::default()).unwrap();
        let req = CompletionRequest::from_prompt("m", &p);
        let first = client.complete(&req).unwrap();
        let second = client.complete(&req).unwrap();
        assert_eq!(first, second);
        assert_eq!(client.stats(), CacheStats { hits: 1, misses: 1 });
        let entry = ResponseCache::open(dir.path()).unwrap().get(&req.cache_key()).unwrap();
        assert_eq!(entry.response, first);
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let l = RateLimiter::per_minute(1200); // 50 ms apart
        let t = Instant::now();
        for _ in 0..3 {
            l.acquire();
        }
        assert!(t.elapsed() >= Duration::from_millis(95));
    }
}

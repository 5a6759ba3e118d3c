//! Provider-agnostic chat completion with rate limiting, bounded retry and
//! response caching.

pub mod cache;
pub mod clock;
pub mod http;
pub mod limiter;
pub mod mock;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::{CacheMeta, ResponseCache, DIGEST_ALGORITHM};
pub use clock::{Clock, FakeClock, SystemClock};
pub use http::HttpBackend;
pub use limiter::RateLimiter;
pub use mock::MockBackend;

/// A single chat-completion request.
///
/// `tag` and `cacheable` steer the gateway only; they are not part of the
/// cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub system_text: Option<String>,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(default)]
    pub tag: Option<String>,
    #[serde(default = "yes")]
    pub cacheable: bool,
}

fn yes() -> bool {
    true
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, user_text: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            system_text: None,
            user_text: user_text.into(),
            temperature: 0.0,
            max_output_tokens: 4096,
            tag: None,
            cacheable: true,
        }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system_text = Some(system.into());
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = Some(tag.into());
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn with_max_output_tokens(mut self, n: u32) -> Self {
        self.max_output_tokens = n;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.user_text.is_empty() {
            return Err(GatewayError::InvalidRequest("user_text is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_chars: usize,
    pub response_chars: usize,
    pub backend: BackendKind,
    pub cache_hit: bool,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub requests_per_minute: u32,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub cache_enabled: bool,
    pub cache_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            requests_per_minute: 60,
            max_retries: 3,
            backoff_base_ms: 500,
            cache_enabled: true,
            cache_dir: None,
        }
    }
}

/// Failure reported by a backend for one attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    /// Timeouts and throttling. Retried.
    #[error("transient backend error: {0}")]
    Transient(String),
    /// Authentication, bad request and similar. Not retried.
    #[error("permanent backend error: {0}")]
    Permanent(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("no mock rule matches prompt starting {prompt_head:?}")]
    NoRule { prompt_head: String },
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("permanent backend error: {0}")]
    Permanent(String),
    #[error("retry budget exhausted after {attempts} attempts: {last}")]
    RetryExhausted { attempts: u32, last: String },
    #[error("malformed backend response: {0}")]
    Malformed(String),
    #[error("no mock rule matches prompt starting {prompt_head:?}")]
    NoRule { prompt_head: String },
}

/// A chat-completion provider.
pub trait Backend: Send + Sync + std::fmt::Debug {
    fn kind(&self) -> BackendKind;
    fn call(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

/// Stable SHA-256 digest over the fields that determine a response.
pub fn cache_key(req: &ChatRequest) -> String {
    let mut h = Sha256::new();
    h.update(b"kbforge-chat-v1\0");
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(req.model_id.as_bytes());
    match &req.system_text {
        Some(s) => {
            field(b"S");
            field(s.as_bytes());
        }
        None => field(b"N"),
    }
    field(req.user_text.as_bytes());
    field(&req.temperature.to_bits().to_le_bytes());
    field(&req.max_output_tokens.to_le_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    Ok,
    Transient,
    Permanent,
    Malformed,
    NoRule,
}

/// One backend attempt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub key: String,
    pub tag: Option<String>,
    pub attempt: u32,
    pub outcome: AttemptOutcome,
}

/// Shared, thread-safe entry point for every model call.
#[derive(Debug)]
pub struct Gateway {
    backend: Arc<dyn Backend>,
    config: GatewayConfig,
    limiter: RateLimiter,
    cache: Option<ResponseCache>,
    clock: Arc<dyn Clock>,
    ledger: Mutex<Vec<LedgerEntry>>,
    cache_hits: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, config: GatewayConfig) -> std::io::Result<Self> {
        Self::with_clock(backend, config, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(
        backend: Arc<dyn Backend>,
        config: GatewayConfig,
        clock: Arc<dyn Clock>,
    ) -> std::io::Result<Self> {
        let cache = match (config.cache_enabled, &config.cache_dir) {
            (false, _) => None,
            (true, Some(dir)) => Some(ResponseCache::on_disk(dir)?),
            (true, None) => Some(ResponseCache::in_memory()),
        };
        Ok(Self {
            backend,
            limiter: RateLimiter::per_minute(config.requests_per_minute, clock.clone()),
            config,
            cache,
            clock,
            ledger: Mutex::new(Vec::new()),
            cache_hits: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    /// Run one request: cache lookup, then rate-limited attempts with
    /// exponential backoff on transient failures.
    pub fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let started = Instant::now();
        let key = cache_key(req);
        let use_cache = req.cacheable && self.cache.is_some();
        if use_cache {
            if let Some(text) = self.cache.as_ref().and_then(|c| c.get(&key)) {
                self.cache_hits.fetch_add(1, Ordering::Relaxed);
                return Ok(ChatResponse {
                    prompt_chars: prompt_chars(req),
                    response_chars: text.chars().count(),
                    text,
                    backend: self.backend.kind(),
                    cache_hit: true,
                    latency_ms: started.elapsed().as_millis() as u64,
                });
            }
        }
        let mut attempt = 0u32;
        let text = loop {
            self.limiter.acquire();
            attempt += 1;
            let result = self.backend.call(req);
            let outcome = match &result {
                Ok(_) => AttemptOutcome::Ok,
                Err(BackendError::Transient(_)) => AttemptOutcome::Transient,
                Err(BackendError::Permanent(_)) => AttemptOutcome::Permanent,
                Err(BackendError::Malformed(_)) => AttemptOutcome::Malformed,
                Err(BackendError::NoRule { .. }) => AttemptOutcome::NoRule,
            };
            self.ledger.lock().unwrap().push(LedgerEntry {
                key: key.clone(),
                tag: req.tag.clone(),
                attempt,
                outcome,
            });
            match result {
                Ok(text) => break text,
                Err(BackendError::Transient(msg)) => {
                    if attempt > self.config.max_retries {
                        return Err(GatewayError::RetryExhausted { attempts: attempt, last: msg });
                    }
                    let factor = 1u64 << (attempt - 1).min(16);
                    self.clock
                        .sleep(Duration::from_millis(self.config.backoff_base_ms.saturating_mul(factor)));
                }
                Err(BackendError::Permanent(msg)) => return Err(GatewayError::Permanent(msg)),
                Err(BackendError::Malformed(msg)) => return Err(GatewayError::Malformed(msg)),
                Err(BackendError::NoRule { prompt_head }) => return Err(GatewayError::NoRule { prompt_head }),
            }
        };
        if use_cache {
            let meta = CacheMeta {
                digest_algorithm: DIGEST_ALGORITHM.into(),
                model_id: req.model_id.clone(),
                temperature: req.temperature,
                max_output_tokens: req.max_output_tokens,
                prompt_chars: prompt_chars(req),
                response_chars: text.chars().count(),
                tag: req.tag.clone(),
            };
            if let Err(e) = self.cache.as_ref().unwrap().put(&key, &text, &meta) {
                tracing::warn!("failed to persist cache entry {key}: {e}");
            }
        }
        Ok(ChatResponse {
            prompt_chars: prompt_chars(req),
            response_chars: text.chars().count(),
            text,
            backend: self.backend.kind(),
            cache_hit: false,
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    /// Number of backend attempts made so far.
    pub fn backend_calls(&self) -> usize {
        self.ledger.lock().unwrap().len()
    }

    /// Backend attempts carrying `tag`.
    pub fn calls_tagged(&self, tag: &str) -> usize {
        self.ledger
            .lock()
            .unwrap()
            .iter()
            .filter(|e| e.tag.as_deref() == Some(tag))
            .count()
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn ledger(&self) -> Vec<LedgerEntry> {
        self.ledger.lock().unwrap().clone()
    }

    pub fn reset_ledger(&self) {
        self.ledger.lock().unwrap().clear();
    }
}

fn prompt_chars(req: &ChatRequest) -> usize {
    req.user_text.chars().count() + req.system_text.as_deref().map_or(0, |s| s.chars().count())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gateway(mock: Arc<MockBackend>, max_retries: u32) -> Gateway {
        let config = GatewayConfig {
            max_retries,
            backoff_base_ms: 10,
            ..GatewayConfig::default()
        };
        Gateway::with_clock(mock, config, Arc::new(FakeClock::new())).unwrap()
    }

    #[test]
    fn second_identical_request_hits_cache() {
        let mock = Arc::new(MockBackend::new());
        mock.register_mock_rule("hello", "world", 0);
        let gw = gateway(mock.clone(), 3);
        let req = ChatRequest::new("m", "hello there");
        let a = gw.complete(&req).unwrap();
        let b = gw.complete(&req).unwrap();
        assert!(!a.cache_hit);
        assert!(b.cache_hit);
        assert_eq!(a.text, b.text);
        assert_eq!(mock.call_count(), 1);
        assert_eq!(gw.backend_calls(), 1);
    }

    #[test]
    fn retries_transient_failures() {
        let mock = Arc::new(MockBackend::new());
        mock.register_mock_rule("x", "ok", 2);
        let gw = gateway(mock.clone(), 3);
        let resp = gw.complete(&ChatRequest::new("m", "x")).unwrap();
        assert_eq!(resp.text, "ok");
        assert_eq!(mock.call_count(), 3);
    }

    #[test]
    fn zero_retries_exhausts_after_one_attempt() {
        let mock = Arc::new(MockBackend::new());
        mock.register_mock_rule("x", "never", u32::MAX);
        let gw = gateway(mock.clone(), 0);
        let err = gw.complete(&ChatRequest::new("m", "x")).unwrap_err();
        assert!(matches!(err, GatewayError::RetryExhausted { attempts: 1, .. }));
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn permanent_errors_do_not_retry() {
        let mock = Arc::new(MockBackend::new());
        mock.register_fn("x", |_| Err(BackendError::Permanent("401".into())));
        let gw = gateway(mock.clone(), 5);
        assert!(matches!(gw.complete(&ChatRequest::new("m", "x")), Err(GatewayError::Permanent(_))));
        assert_eq!(mock.call_count(), 1);
    }

    #[test]
    fn rules_first_match_wins() {
        let mock = Arc::new(MockBackend::new());
        mock.register_mock_rule("##CATEGORIZE##", "first", 0);
        mock.register_mock_rule("CATEGORIZE", "second", 0);
        let gw = gateway(mock, 0);
        let r = gw.complete(&ChatRequest::new("m", "do ##CATEGORIZE## now")).unwrap();
        assert_eq!(r.text, "first");
    }

    #[test]
    fn unmatched_prompt_names_its_head() {
        let mock = Arc::new(MockBackend::new());
        let gw = gateway(mock, 0);
        let prompt = "z".repeat(200);
        match gw.complete(&ChatRequest::new("m", prompt.clone())) {
            Err(GatewayError::NoRule { prompt_head }) => assert_eq!(prompt_head, prompt[..80]),
            other => panic!("expected NoRule, got {other:?}"),
        }
    }

    #[test]
    fn invalid_requests_rejected() {
        let gw = gateway(Arc::new(MockBackend::new()), 0);
        assert!(gw.complete(&ChatRequest::new("m", "")).is_err());
        assert!(gw.complete(&ChatRequest::new("m", "x").with_temperature(1.5)).is_err());
    }

    #[test]
    fn cache_key_sensitivity() {
        let base = ChatRequest::new("m", "abc");
        assert_eq!(cache_key(&base), cache_key(&base.clone()));
        assert_ne!(cache_key(&base), cache_key(&base.clone().with_temperature(0.3)));
        assert_ne!(cache_key(&base), cache_key(&base.clone().with_max_output_tokens(10)));
        assert_ne!(cache_key(&base), cache_key(&base.clone().with_system("")));
        let mut other_model = base.clone();
        other_model.model_id = "n".into();
        assert_ne!(cache_key(&base), cache_key(&other_model));
        // Steering fields are not part of the key.
        assert_eq!(cache_key(&base), cache_key(&base.clone().with_tag("t")));
    }

    #[test]
    fn cache_key_single_char_perturbations() {
        let text = "Reset access for FC123";
        let base = cache_key(&ChatRequest::new("m", text));
        let mut keys = std::collections::HashSet::new();
        keys.insert(base.clone());
        let chars: Vec<char> = text.chars().collect();
        let mut variants = 0;
        for i in 0..chars.len() {
            for sub in ['a', 'Z', ' ', '1'] {
                if chars[i] == sub {
                    continue;
                }
                let mut c = chars.clone();
                c[i] = sub;
                let s: String = c.into_iter().collect();
                assert!(keys.insert(cache_key(&ChatRequest::new("m", s))));
                variants += 1;
            }
        }
        assert_eq!(keys.len(), variants + 1);
    }

    #[test]
    fn disk_cache_survives_new_gateway() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockBackend::new());
        mock.register_mock_rule("q", "answer", 0);
        let config = GatewayConfig {
            cache_dir: Some(dir.path().to_path_buf()),
            ..GatewayConfig::default()
        };
        let req = ChatRequest::new("m", "q?");
        let gw = Gateway::with_clock(mock.clone(), config.clone(), Arc::new(FakeClock::new())).unwrap();
        gw.complete(&req).unwrap();
        let gw2 = Gateway::with_clock(mock.clone(), config, Arc::new(FakeClock::new())).unwrap();
        let r = gw2.complete(&req).unwrap();
        assert!(r.cache_hit);
        assert_eq!(r.text, "answer");
        assert_eq!(mock.call_count(), 1);
        let key = cache_key(&req);
        assert!(dir.path().join(format!("{key}.json")).exists());
    }

    #[test]
    fn rate_limit_applies_to_backend_calls() {
        let mock = Arc::new(MockBackend::new());
        mock.register_fn("", |r| Ok(r.user_text.clone()));
        let clock = Arc::new(FakeClock::new());
        let config = GatewayConfig {
            requests_per_minute: 2,
            ..GatewayConfig::default()
        };
        let gw = Gateway::with_clock(mock, config, clock.clone()).unwrap();
        for i in 0..5 {
            gw.complete(&ChatRequest::new("m", format!("r{i}"))).unwrap();
        }
        // Calls 1-2 at t=0, 3-4 at t=60, 5 at t=120.
        assert_eq!(clock.now(), Duration::from_secs(120));
    }
}

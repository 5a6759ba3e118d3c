//! Deterministic scripted backend.
//!
//! Rules are matched against the request's user text in registration order;
//! the first rule whose pattern is a substring wins. An empty pattern matches
//! every request. A request matching no rule fails with
//! [`BackendError::NoRule`].

use std::fmt;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use super::{Backend, BackendError, BackendKind, ChatRequest};

pub type RuleId = usize;

type Responder = Arc<dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync>;

struct MockRule {
    pattern: String,
    responder: Responder,
    failures_left: AtomicU32,
    hits: AtomicUsize,
}

#[derive(Default)]
pub struct MockBackend {
    rules: RwLock<Vec<Arc<MockRule>>>,
    latency: Option<Duration>,
    calls: AtomicUsize,
}

impl fmt::Debug for MockBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MockBackend")
            .field("rules", &self.rules.read().unwrap().len())
            .field("calls", &self.calls.load(Ordering::Relaxed))
            .finish()
    }
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sleep for `latency` (wall clock) on every call. Used by benches to
    /// stand in for network round trips.
    pub fn with_latency(latency: Duration) -> Self {
        Self {
            latency: Some(latency),
            ..Self::default()
        }
    }

    /// Script a fixed response. The first `failures_before_success` matching
    /// calls fail with a transient error.
    pub fn register_mock_rule(
        &self,
        pattern: impl Into<String>,
        response: impl Into<String>,
        failures_before_success: u32,
    ) -> RuleId {
        let response = response.into();
        self.push(pattern.into(), Arc::new(move |_| Ok(response.clone())), failures_before_success)
    }

    /// Script a response computed from the request.
    pub fn register_fn<F>(&self, pattern: impl Into<String>, f: F) -> RuleId
    where
        F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        self.push(pattern.into(), Arc::new(f), 0)
    }

    fn push(&self, pattern: String, responder: Responder, failures: u32) -> RuleId {
        let mut rules = self.rules.write().unwrap();
        rules.push(Arc::new(MockRule {
            pattern,
            responder,
            failures_left: AtomicU32::new(failures),
            hits: AtomicUsize::new(0),
        }));
        rules.len() - 1
    }

    /// Total calls received, including scripted failures and unmatched ones.
    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Calls routed to rule `id`.
    pub fn rule_hits(&self, id: RuleId) -> usize {
        self.rules.read().unwrap()[id].hits.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn call(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        let rule = self
            .rules
            .read()
            .unwrap()
            .iter()
            .find(|r| req.user_text.contains(r.pattern.as_str()))
            .cloned();
        let Some(rule) = rule else {
            return Err(BackendError::NoRule {
                prompt_head: req.user_text.chars().take(80).collect(),
            });
        };
        rule.hits.fetch_add(1, Ordering::SeqCst);
        let failing = rule
            .failures_left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if failing {
            return Err(BackendError::Transient("scripted transient failure".into()));
        }
        (rule.responder)(req)
    }
}

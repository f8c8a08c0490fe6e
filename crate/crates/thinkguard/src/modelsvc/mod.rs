//! Teacher and judge model services: a chat-completion client trait, an
//! HTTP adapter, deterministic mocks, retries with exponential backoff and
//! bounded request concurrency.
//!
//! Request bodies are `{"model", "messages": [{"role", "content"}],
//! "temperature"}` and responses are read from
//! `choices[0].message.content`. The user message ends with a line `INPUT`
//! followed by a JSON object holding the item fields, which is what the
//! mocks read.

pub mod distill;
pub mod http;
pub mod judge;
pub mod mock;
pub mod ratings;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use distill::{distill_cot, leak_overlap, Distilled, ANTI_LEAKAGE_INSTRUCTION, LEAK_MIN_WORDS};
pub use http::HttpClient;
pub use judge::{aggregate_judgments, judge_explanation, JudgeScore, JudgmentTable, RUBRIC_V1, RUBRIC_VERSION};
pub use mock::{MockJudge, MockTeacher};

pub const API_KEY_ENV: &str = "MODELSVC_API_KEY";
pub const INPUT_MARKER: &str = "\nINPUT\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    /// System instructions plus a user message carrying `input` as JSON.
    pub fn new(model: &str, system: &str, task: &str, input: &Value) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![
                ChatMessage { role: "system".into(), content: system.to_string() },
                ChatMessage { role: "user".into(), content: format!("{task}{INPUT_MARKER}{input}") },
            ],
            temperature: 0.0,
        }
    }

    /// The JSON object after the `INPUT` line of the last user message.
    pub fn input(&self) -> Option<Value> {
        let user = self.messages.iter().rev().find(|m| m.role == "user")?;
        let (_, json) = user.content.rsplit_once(INPUT_MARKER)?;
        serde_json::from_str(json).ok()
    }
}

/// Failure of a single call.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CallError {
    /// Worth retrying: timeouts, refused connections, 429 and 5xx.
    #[error("transient: {0}")]
    Transient(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait ModelClient: Send + Sync {
    /// Identifier recorded alongside results, e.g. the judge id.
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<String, CallError>;
}

impl<C: ModelClient + ?Sized> ModelClient for Box<C> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, CallError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelSvcError {
    #[error("item {item}: service unavailable after {attempts} attempt(s): {last}")]
    ServiceUnavailable { item: String, attempts: u32, last: String },
    #[error("item {item}: trace repeats {overlap} consecutive words of the gold explanation")]
    LeakageDetected { item: String, overlap: usize },
    #[error("item {item}: empty response")]
    EmptyResponse { item: String },
    #[error("item {item}: could not parse four 1-5 scores from `{response}`")]
    UnparseableScore { item: String, response: String },
    #[error("item {item}: explanation to judge is empty")]
    EmptyExplanation { item: String },
    #[error("unknown rubric version `{0}`")]
    UnknownRubric(String),
    #[error("incomplete ratings: {0}")]
    IncompleteRatings(String),
}

impl ModelSvcError {
    pub fn is_service_failure(&self) -> bool {
        matches!(self, ModelSvcError::ServiceUnavailable { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceClientConfig {
    /// Chat-completion URL; empty means only `--mock` runs are possible.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    /// Delay before retry `i` is `min(backoff_initial_ms * 2^i, backoff_max_ms)`.
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
    pub max_concurrency: usize,
}

impl Default for ServiceClientConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: "teacher".into(),
            api_key_env: API_KEY_ENV.into(),
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_initial_ms: 500,
            backoff_max_ms: 8_000,
            max_concurrency: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid model service config: {0}")]
pub struct ServiceConfigError(String);

impl ServiceClientConfig {
    pub fn validate(&self) -> Result<(), ServiceConfigError> {
        if self.max_concurrency == 0 {
            return Err(ServiceConfigError("max_concurrency must be at least 1".into()));
        }
        if self.backoff_max_ms < self.backoff_initial_ms {
            return Err(ServiceConfigError("backoff_max_ms is below backoff_initial_ms".into()));
        }
        Ok(())
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            initial: Duration::from_millis(self.backoff_initial_ms),
            max: Duration::from_millis(self.backoff_max_ms),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial: Duration,
    pub max: Duration,
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        Self { max_retries, initial: Duration::ZERO, max: Duration::ZERO }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.initial.saturating_mul(factor).min(self.max)
    }
}

/// Response text and the number of attempts it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Answer {
    pub text: String,
    pub attempts: u32,
}

/// Calls `client`, retrying transient failures with exponential backoff.
pub fn call_with_retry(
    client: &dyn ModelClient,
    request: &ChatRequest,
    policy: &RetryPolicy,
    item: &str,
) -> Result<Answer, ModelSvcError> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        match client.complete(request) {
            Ok(text) => return Ok(Answer { text, attempts }),
            Err(CallError::Transient(_)) if attempts <= policy.max_retries => {
                thread::sleep(policy.delay(attempts - 1));
            }
            Err(CallError::Transient(last) | CallError::Fatal(last)) => {
                return Err(ModelSvcError::ServiceUnavailable { item: item.to_string(), attempts, last })
            }
        }
    }
}

/// Counting semaphore.
#[derive(Debug)]
pub struct Semaphore {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self { free: Mutex::new(permits), cond: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore lock");
        while *free == 0 {
            free = self.cond.wait(free).expect("semaphore lock");
        }
        *free -= 1;
        Permit(self)
    }
}

pub struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore lock") += 1;
        self.0.cond.notify_one();
    }
}

/// Wraps a client so that at most `limit` calls run at once, however many
/// threads share it.
pub struct Bounded<C> {
    inner: C,
    gate: Semaphore,
}

impl<C: ModelClient> Bounded<C> {
    pub fn new(inner: C, limit: usize) -> Self {
        Self { inner, gate: Semaphore::new(limit.max(1)) }
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: ModelClient> ModelClient for Bounded<C> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, CallError> {
        let _permit = self.gate.acquire();
        self.inner.complete(request)
    }
}

/// Applies `f` to every item on up to `workers` threads. Results keep the
/// input order.
pub fn map_concurrent<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                *slots[i].lock().expect("result slot") = Some(f(item));
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every item visited"))
        .collect()
}

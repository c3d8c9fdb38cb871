//! Completion backends and the gateway every model-dependent step goes
//! through.
//!
//! The [`Gateway`] adds retries with exponential backoff, a bound on
//! in-flight requests, JSON extraction and schema checks on top of a
//! [`CompletionBackend`]. Two backends ship: [`MockBackend`], a
//! deterministic keyword rule engine over the CEE, and [`RemoteBackend`],
//! an HTTP chat-completion client.

mod mock;
mod prompts;
mod remote;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::pool::Semaphore;

pub use mock::MockBackend;
pub use prompts::{bind, render, section, Field, FieldType, PromptKind, PromptTemplate, ALL_KINDS, MARKER};
pub use remote::RemoteBackend;

/// Failure of a single request.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("backend unreachable: {0}")]
    Unreachable(String),
    #[error("backend returned HTTP {0}")]
    Status(u16),
    #[error("request timed out")]
    Timeout,
    #[error("unexpected response: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("unbound placeholder `{{{0}}}`")]
    UnboundPlaceholder(String),
    #[error("giving up after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: BackendError },
    #[error("no JSON object found in completion")]
    NoJson,
    #[error("completion does not match schema: missing `{0}`")]
    Schema(String),
    #[error("malformed completion after {attempts} attempt(s): {detail}")]
    Malformed { attempts: u32, detail: String },
    #[error("prompt carries no known template marker")]
    UnknownTemplate,
}

pub trait CompletionBackend: Send + Sync {
    /// One request, no retries.
    fn send(&self, prompt: &str) -> Result<String, BackendError>;
}

/// Backend built from a closure. Handy for scripted failures in tests.
pub struct FnBackend<F>(pub F);

impl<F> CompletionBackend for FnBackend<F>
where
    F: Fn(&str) -> Result<String, BackendError> + Send + Sync,
{
    fn send(&self, prompt: &str) -> Result<String, BackendError> {
        (self.0)(prompt)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct BackendConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// In-flight request bound (K).
    pub max_in_flight: usize,
    pub backoff_base_ms: u64,
    /// Fixed at 0 for reproducibility.
    pub temperature: f64,
    /// Name of the environment variable holding the bearer credential.
    pub api_key_env: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_in_flight: 8,
            backoff_base_ms: 500,
            temperature: 0.0,
            api_key_env: "EXGUARD_API_KEY".into(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        if self.timeout_secs.is_nan() || self.timeout_secs <= 0.0 {
            return Err("timeout_secs must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub raw: String,
    /// Present iff the reply parsed and matched the template schema.
    pub payload: Option<Value>,
    pub attempts: u32,
    pub degraded: bool,
}

pub struct Gateway {
    backend: Arc<dyn CompletionBackend>,
    config: BackendConfig,
    slots: Semaphore,
    degraded: AtomicUsize,
    calls: AtomicUsize,
    answered: AtomicUsize,
    exhausted: AtomicUsize,
}

impl Gateway {
    pub fn new(backend: Arc<dyn CompletionBackend>, config: BackendConfig) -> Self {
        let slots = Semaphore::new(config.max_in_flight);
        Gateway {
            backend,
            config,
            slots,
            degraded: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
            answered: AtomicUsize::new(0),
            exhausted: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn backoff(&self, attempt: u32) {
        let ms = self.config.backoff_base_ms.saturating_mul(1u64 << attempt.min(16));
        if ms > 0 {
            std::thread::sleep(Duration::from_millis(ms));
        }
    }

    /// Send with up to `max_retries` retries on transport failure.
    pub fn complete(&self, prompt: &str) -> Result<Completion, GatewayError> {
        let mut attempt = 0u32;
        loop {
            let result = {
                let _permit = self.slots.acquire();
                self.calls.fetch_add(1, Ordering::Relaxed);
                self.backend.send(prompt)
            };
            attempt += 1;
            match result {
                Ok(raw) => {
                    self.answered.fetch_add(1, Ordering::Relaxed);
                    return Ok(Completion { raw, payload: None, attempts: attempt, degraded: false });
                }
                Err(e) if attempt > self.config.max_retries => {
                    self.exhausted.fetch_add(1, Ordering::Relaxed);
                    return Err(GatewayError::Exhausted { attempts: attempt, last: e });
                }
                Err(e) => {
                    log::debug!("attempt {attempt} failed: {e}");
                    self.backoff(attempt - 1);
                }
            }
        }
    }

    /// Like [`complete`](Self::complete), then extract and schema-check the
    /// JSON reply, re-asking on malformed output.
    pub fn complete_structured(&self, kind: PromptKind, prompt: &str) -> Result<Completion, GatewayError> {
        let template = kind.template();
        let mut attempts = 0u32;
        let mut last = String::new();
        for round in 0..=self.config.max_retries {
            let mut c = self.complete(prompt)?;
            attempts += c.attempts;
            match extract_json(&c.raw).and_then(|v| template.check(&v).map(|_| v).map_err(GatewayError::Schema)) {
                Ok(v) => {
                    c.payload = Some(v);
                    c.attempts = attempts;
                    return Ok(c);
                }
                Err(e) => {
                    log::debug!("{kind}: malformed reply on round {round}: {e}");
                    last = e.to_string();
                }
            }
        }
        Err(GatewayError::Malformed { attempts, detail: last })
    }

    /// Record that a caller fell back to an offline path.
    pub fn note_degraded(&self) {
        self.degraded.fetch_add(1, Ordering::Relaxed);
    }

    pub fn degraded_count(&self) -> usize {
        self.degraded.load(Ordering::Relaxed)
    }

    pub fn call_count(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Requests that got a reply, malformed or not.
    pub fn answered_count(&self) -> usize {
        self.answered.load(Ordering::Relaxed)
    }

    /// Requests that failed on every attempt.
    pub fn exhausted_count(&self) -> usize {
        self.exhausted.load(Ordering::Relaxed)
    }
}

/// First balanced top-level JSON object in `text`, tolerating surrounding
/// prose and code fences.
pub fn extract_json(text: &str) -> Result<Value, GatewayError> {
    let bytes = text.as_bytes();
    let mut from = 0;
    while let Some(rel) = text[from..].find('{') {
        let start = from + rel;
        if let Some(end) = balanced_end(bytes, start) {
            if let Ok(v @ Value::Object(_)) = serde_json::from_str::<Value>(&text[start..=end]) {
                return Ok(v);
            }
        }
        from = start + 1;
    }
    Err(GatewayError::NoJson)
}

fn balanced_end(bytes: &[u8], start: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    fn fast(retries: u32) -> BackendConfig {
        BackendConfig { max_retries: retries, backoff_base_ms: 0, ..BackendConfig::default() }
    }

    #[test]
    fn extracts_json_from_prose_and_fences() {
        assert_eq!(extract_json("Sure! {\"scenario\": \"x\"}").unwrap(), serde_json::json!({"scenario": "x"}));
        let fenced = "Here you go:\n```json\n{\"a\": {\"b\": \"}\"}}\n```\nbye";
        assert_eq!(extract_json(fenced).unwrap(), serde_json::json!({"a": {"b": "}"}}));
        assert_eq!(extract_json("{\"scenario\": }"), Err(GatewayError::NoJson));
        assert_eq!(extract_json("no json"), Err(GatewayError::NoJson));
    }

    #[test]
    fn retries_until_success() {
        let n = Mutex::new(0);
        let backend = FnBackend(move |_: &str| {
            let mut n = n.lock().unwrap();
            *n += 1;
            if *n <= 2 {
                Err(BackendError::Status(500))
            } else {
                Ok("ok".to_string())
            }
        });
        let gw = Gateway::new(Arc::new(backend), fast(2));
        let c = gw.complete("p").unwrap();
        assert_eq!(c.attempts, 3);
        assert_eq!(c.raw, "ok");
    }

    #[test]
    fn zero_retries_fails_fast() {
        let gw = Gateway::new(Arc::new(FnBackend(|_: &str| Err(BackendError::Timeout))), fast(0));
        assert_eq!(
            gw.complete("p").unwrap_err(),
            GatewayError::Exhausted { attempts: 1, last: BackendError::Timeout }
        );
    }

    #[test]
    fn structured_retries_on_malformed_output() {
        let gw = Gateway::new(Arc::new(FnBackend(|_: &str| Ok("not json".to_string()))), fast(2));
        let err = gw.complete_structured(PromptKind::CeeGenScenario, "p").unwrap_err();
        assert!(matches!(err, GatewayError::Malformed { attempts: 3, .. }));
    }

    #[test]
    fn structured_payload_present_on_success() {
        let gw = Gateway::new(Arc::new(FnBackend(|_: &str| Ok("{\"scenario\": \"s\"}".to_string()))), fast(0));
        let c = gw.complete_structured(PromptKind::CeeGenScenario, "p").unwrap();
        assert_eq!(c.payload.unwrap()["scenario"], "s");
    }
}

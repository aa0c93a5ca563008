//! Blocking network client for remote model endpoints speaking the standard
//! chat-completion wire protocol: `POST {base_url}/chat/completions` with a
//! two-message conversation and sampling parameters.
//!
//! The gateway enforces a concurrency budget shared by every caller holding
//! the same handle, retries rate-limited requests with jittered exponential
//! backoff, and appends one transcript entry per network attempt. Credentials
//! are read from the environment at call time and never stored.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protocol::PromptBundle;

/// A remote chat-completion endpoint. `credential_env` names the environment
/// variable holding the API key; the key itself is never persisted.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
}

impl ModelEndpoint {
    pub fn new(base_url: impl Into<String>, model_id: impl Into<String>) -> Result<Self, GatewayError> {
        let base_url = base_url.into();
        if !(base_url.starts_with("http://") || base_url.starts_with("https://")) {
            return Err(GatewayError::InvalidEndpoint(base_url));
        }
        Ok(ModelEndpoint { base_url, model_id: model_id.into(), credential_env: None })
    }

    pub fn with_credential_env(mut self, var: impl Into<String>) -> Self {
        self.credential_env = Some(var.into());
        self
    }

    fn completions_url(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }
}

/// Sampling parameters sent with every request.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u32,
    /// Client-side prompt budget; not part of the wire request.
    pub context_limit: u32,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { temperature: 0.6, top_p: 0.95, top_k: 20, max_tokens: 4096, context_limit: 32_768 }
    }
}

/// Retry behavior for rate-limited requests.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, base_delay_ms: 200, max_delay_ms: 5_000 }
    }
}

impl RetryPolicy {
    fn delay_for_attempt(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let exp = self.base_delay_ms.saturating_mul(1u64 << (attempt - 1).min(16));
        let capped = exp.min(self.max_delay_ms).max(1);
        // Full jitter keeps stampedes apart without stretching the cap.
        Duration::from_millis(rng.gen_range(capped / 2..=capped))
    }
}

/// What one network attempt looked like. Append-only; failures included.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CallTranscript {
    pub request_id: u64,
    pub attempt: u32,
    pub unix_ms: u64,
    pub latency_ms: u64,
    pub base_url: String,
    pub model_id: String,
    pub system_text: String,
    pub user_text: String,
    pub sampling: SamplingConfig,
    pub outcome: AttemptOutcome,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttemptOutcome {
    Response(String),
    HttpStatus(u16),
    Transport(String),
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("concurrency budget must be at least 1")]
    InvalidBudget,
    #[error("endpoint base URL must be absolute: {0:?}")]
    InvalidEndpoint(String),
    #[error("credential environment variable {0} is not set")]
    CredentialMissing(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("server returned status {status}")]
    ServerError { status: u16 },
    #[error("malformed completion response: {0}")]
    MalformedResponse(String),
}

/// A successful completion with its transcript linkage.
#[derive(Clone, Debug)]
pub struct ChatOutcome {
    pub text: String,
    pub request_id: u64,
    /// 1-based index of the attempt that succeeded.
    pub attempts: u32,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 2],
    temperature: f64,
    top_p: f64,
    top_k: u32,
    max_tokens: u32,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: String,
}

/// Shared client with a fixed in-flight request budget.
pub struct Gateway {
    client: reqwest::blocking::Client,
    permits: Semaphore,
    retry: RetryPolicy,
    transcripts: Mutex<Vec<CallTranscript>>,
    next_request_id: AtomicU64,
}

impl Gateway {
    /// A gateway allowing at most `limit` requests in flight at once.
    pub fn with_concurrency_budget(limit: usize) -> Result<Self, GatewayError> {
        Gateway::new(limit, RetryPolicy::default(), Duration::from_secs(120))
    }

    pub fn new(limit: usize, retry: RetryPolicy, request_timeout: Duration) -> Result<Self, GatewayError> {
        if limit == 0 {
            return Err(GatewayError::InvalidBudget);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(request_timeout)
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Gateway {
            client,
            permits: Semaphore::new(limit),
            retry,
            transcripts: Mutex::new(Vec::new()),
            next_request_id: AtomicU64::new(1),
        })
    }

    /// Sends one two-message conversation and returns the first completion's
    /// text verbatim. HTTP 429 responses are retried under the gateway's
    /// retry policy; other failures return immediately.
    pub fn chat_complete(
        &self,
        endpoint: &ModelEndpoint,
        bundle: &PromptBundle,
        sampling: &SamplingConfig,
    ) -> Result<ChatOutcome, GatewayError> {
        let credential = match &endpoint.credential_env {
            Some(var) => match std::env::var(var) {
                Ok(value) if !value.is_empty() => Some(value),
                _ => return Err(GatewayError::CredentialMissing(var.clone())),
            },
            None => None,
        };

        let _permit = self.permits.acquire();
        let request_id = self.next_request_id.fetch_add(1, Ordering::Relaxed);
        let url = endpoint.completions_url();
        let body = WireRequest {
            model: &endpoint.model_id,
            messages: [
                WireMessage { role: "system", content: &bundle.system_text },
                WireMessage { role: "user", content: &bundle.user_text },
            ],
            temperature: sampling.temperature,
            top_p: sampling.top_p,
            top_k: sampling.top_k,
            max_tokens: sampling.max_tokens,
        };

        let mut rng = rand::thread_rng();
        for attempt in 1..=self.retry.max_attempts {
            let started = Instant::now();
            let mut request = self.client.post(&url).json(&body);
            if let Some(token) = &credential {
                request = request.bearer_auth(token);
            }
            let sent = request.send();
            let latency_ms = started.elapsed().as_millis() as u64;

            match sent {
                Err(err) => {
                    self.record(endpoint, bundle, sampling, request_id, attempt, latency_ms, AttemptOutcome::Transport(err.to_string()));
                    return Err(GatewayError::Transport(err.to_string()));
                }
                Ok(response) => {
                    let status = response.status().as_u16();
                    if status == 429 {
                        self.record(endpoint, bundle, sampling, request_id, attempt, latency_ms, AttemptOutcome::HttpStatus(status));
                        if attempt == self.retry.max_attempts {
                            return Err(GatewayError::RateLimited { attempts: attempt });
                        }
                        std::thread::sleep(self.retry.delay_for_attempt(attempt, &mut rng));
                        continue;
                    }
                    if !(200..300).contains(&status) {
                        self.record(endpoint, bundle, sampling, request_id, attempt, latency_ms, AttemptOutcome::HttpStatus(status));
                        return Err(GatewayError::ServerError { status });
                    }
                    let text = response.text().map_err(|e| GatewayError::Transport(e.to_string()))?;
                    let parsed: WireResponse = serde_json::from_str(&text)
                        .map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
                    let content = parsed
                        .choices
                        .into_iter()
                        .next()
                        .map(|c| c.message.content)
                        .ok_or_else(|| GatewayError::MalformedResponse("empty choices array".to_string()))?;
                    self.record(endpoint, bundle, sampling, request_id, attempt, latency_ms, AttemptOutcome::Response(content.clone()));
                    return Ok(ChatOutcome { text: content, request_id, attempts: attempt });
                }
            }
        }
        unreachable!("retry loop always returns")
    }

    /// Copy of every transcript recorded so far, in append order.
    pub fn transcripts(&self) -> Vec<CallTranscript> {
        self.transcripts.lock().expect("transcript lock").clone()
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        endpoint: &ModelEndpoint,
        bundle: &PromptBundle,
        sampling: &SamplingConfig,
        request_id: u64,
        attempt: u32,
        latency_ms: u64,
        outcome: AttemptOutcome,
    ) {
        let unix_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let entry = CallTranscript {
            request_id,
            attempt,
            unix_ms,
            latency_ms,
            base_url: endpoint.base_url.clone(),
            model_id: endpoint.model_id.clone(),
            system_text: bundle.system_text.clone(),
            user_text: bundle.user_text.clone(),
            sampling: *sampling,
            outcome,
        };
        self.transcripts.lock().expect("transcript lock").push(entry);
    }
}

/// Minimal counting semaphore; released on drop.
struct Semaphore {
    available: Mutex<usize>,
    signal: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(count: usize) -> Self {
        Semaphore { available: Mutex::new(count), signal: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().expect("semaphore lock");
        while *available == 0 {
            available = self.signal.wait(available).expect("semaphore wait");
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut available = self.0.available.lock().expect("semaphore lock");
        *available += 1;
        self.0.signal.notify_one();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_defaults_match_the_protocol() {
        let s = SamplingConfig::default();
        assert_eq!(s.temperature, 0.6);
        assert_eq!(s.top_p, 0.95);
        assert_eq!(s.top_k, 20);
        assert_eq!(s.max_tokens, 4096);
        assert_eq!(s.context_limit, 32_768);
    }

    #[test]
    fn zero_budget_is_rejected() {
        assert!(matches!(Gateway::with_concurrency_budget(0), Err(GatewayError::InvalidBudget)));
        assert!(Gateway::with_concurrency_budget(1).is_ok());
    }

    #[test]
    fn endpoint_urls_must_be_absolute() {
        assert!(ModelEndpoint::new("localhost:8000", "m").is_err());
        let ep = ModelEndpoint::new("http://127.0.0.1:9000/v1/", "m").unwrap();
        assert_eq!(ep.completions_url(), "http://127.0.0.1:9000/v1/chat/completions");
    }

    #[test]
    fn missing_credential_fails_before_any_network_traffic() {
        let gateway = Gateway::with_concurrency_budget(1).unwrap();
        let endpoint = ModelEndpoint::new("http://127.0.0.1:1", "m")
            .unwrap()
            .with_credential_env("DILEMMA_TEST_UNSET_CREDENTIAL");
        let bundle = PromptBundle { system_text: "s".into(), user_text: "u".into() };
        let err = gateway
            .chat_complete(&endpoint, &bundle, &SamplingConfig::default())
            .unwrap_err();
        assert!(matches!(err, GatewayError::CredentialMissing(_)));
        assert!(gateway.transcripts().is_empty());
    }

    #[test]
    fn backoff_delays_grow_and_respect_the_cap() {
        let policy = RetryPolicy { max_attempts: 5, base_delay_ms: 100, max_delay_ms: 350 };
        let mut rng = rand::thread_rng();
        for attempt in 1..=5 {
            let d = policy.delay_for_attempt(attempt, &mut rng);
            assert!(d.as_millis() as u64 <= 350);
            assert!(d.as_millis() as u64 >= 50);
        }
    }
}

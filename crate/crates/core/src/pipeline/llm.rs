//! Text-generation backends and the retry loop around them.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

/// Environment variable holding the bearer token unless configured otherwise.
pub const DEFAULT_API_KEY_ENV: &str = "DPTEXT_API_KEY";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    /// Worth retrying: rate limiting, server errors, dropped connections.
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("endpoint error{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Endpoint { status: Option<u16>, message: String },
    #[error("gave up after {attempts} attempts: {last}")]
    Timeout { attempts: u32, last: String },
    #[error("configuration error: {0}")]
    Config(String),
}

/// Something that turns a prompt into generated text.
pub trait LlmClient: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String, LlmError>;

    /// Short description recorded in run provenance.
    fn name(&self) -> String {
        "client".to_string()
    }
}

/// Exponential backoff: `base_delay · 2^i` before retry `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_secs(1),
        }
    }
}

impl RetryPolicy {
    /// Same retry count, no waiting.
    pub fn immediate() -> Self {
        Self {
            base_delay: Duration::ZERO,
            ..Self::default()
        }
    }

    pub fn delay(&self, retry: u32) -> Duration {
        self.base_delay.saturating_mul(1 << retry.min(16))
    }
}

/// Calls `client`, retrying transient failures per `policy`.
pub fn run_inference(
    client: &dyn LlmClient,
    prompt: &str,
    policy: &RetryPolicy,
) -> Result<String, LlmError> {
    let mut retry = 0;
    loop {
        match client.generate(prompt) {
            Err(LlmError::Transient(msg)) => {
                if retry == policy.max_retries {
                    return Err(LlmError::Timeout {
                        attempts: retry + 1,
                        last: msg,
                    });
                }
                std::thread::sleep(policy.delay(retry));
                retry += 1;
            }
            other => return other,
        }
    }
}

#[derive(Debug, Clone)]
enum MockBehavior {
    Echo,
    Fixed(String),
    Table {
        answers: HashMap<String, String>,
        default: Option<String>,
    },
    Map(fn(&str) -> String),
}

/// Deterministic in-process backend for tests and `--mock` runs.
#[derive(Debug)]
pub struct MockClient {
    behavior: MockBehavior,
    failures: Vec<LlmError>,
    calls: AtomicUsize,
}

impl MockClient {
    fn with(behavior: MockBehavior) -> Self {
        Self {
            behavior,
            failures: Vec::new(),
            calls: AtomicUsize::new(0),
        }
    }

    /// Returns the prompt unchanged.
    pub fn echo() -> Self {
        Self::with(MockBehavior::Echo)
    }

    pub fn fixed(text: impl Into<String>) -> Self {
        Self::with(MockBehavior::Fixed(text.into()))
    }

    /// Looks the prompt up in `answers`; unknown prompts get `default`, or
    /// an endpoint error when there is none.
    pub fn table(answers: HashMap<String, String>, default: Option<String>) -> Self {
        Self::with(MockBehavior::Table { answers, default })
    }

    pub fn map(f: fn(&str) -> String) -> Self {
        Self::with(MockBehavior::Map(f))
    }

    /// The first calls fail with `errors`, in order, before the normal
    /// behaviour takes over.
    pub fn failing_first(mut self, errors: Vec<LlmError>) -> Self {
        self.failures = errors;
        self
    }

    /// Every call times out.
    pub fn unreachable() -> Self {
        Self::fixed("").failing_first(vec![LlmError::Transient("request timed out".into()); 64])
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for MockClient {
    fn generate(&self, prompt: &str) -> Result<String, LlmError> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(err) = self.failures.get(call) {
            return Err(err.clone());
        }
        match &self.behavior {
            MockBehavior::Echo => Ok(prompt.to_string()),
            MockBehavior::Fixed(text) => Ok(text.clone()),
            MockBehavior::Table { answers, default } => answers
                .get(prompt)
                .or(default.as_ref())
                .cloned()
                .ok_or_else(|| LlmError::Endpoint {
                    status: None,
                    message: "mock has no answer for this prompt".into(),
                }),
            MockBehavior::Map(f) => Ok(f(prompt)),
        }
    }

    fn name(&self) -> String {
        let kind = match self.behavior {
            MockBehavior::Echo => "echo",
            MockBehavior::Fixed(_) => "fixed",
            MockBehavior::Table { .. } => "table",
            MockBehavior::Map(_) => "map",
        };
        format!("mock:{kind}")
    }
}

/// Where and how to reach a chat-completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Name of the environment variable with the bearer token. Empty means
    /// no authentication.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_concurrency: usize,
}

impl LlmEndpointConfig {
    /// Defaults for the remote model that sees perturbed prompts.
    pub fn remote() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            temperature: 0.5,
            max_output_tokens: 100,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_secs: 60,
            max_concurrency: 4,
        }
    }

    /// Defaults for the locally hosted restoration model.
    pub fn restoration() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "vicuna-7b".into(),
            temperature: 0.0,
            api_key_env: String::new(),
            max_concurrency: 1,
            ..Self::remote()
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::Config(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.timeout_secs == 0 {
            return Err(LlmError::Config("timeout must be positive".into()));
        }
        if self.max_concurrency == 0 {
            return Err(LlmError::Config("max_concurrency must be at least 1".into()));
        }
        Ok(())
    }
}

/// Extracts `choices[0].message.content` from a chat-completion response.
pub fn parse_chat_response(body: &str) -> Result<String, LlmError> {
    let malformed = |why: &str| LlmError::Endpoint {
        status: Some(200),
        message: format!("malformed response ({why}): {}", truncate(body, 200)),
    };
    let v: Value = serde_json::from_str(body).map_err(|e| malformed(&e.to_string()))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| malformed("no choices[0].message.content"))
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// Chat-completion client over HTTP(S).
#[derive(Debug)]
pub struct HttpClient {
    cfg: LlmEndpointConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl HttpClient {
    /// Reads the API key from the configured environment variable. Fails
    /// before any request is made when the variable is unset.
    pub fn new(cfg: LlmEndpointConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let api_key = if cfg.api_key_env.is_empty() {
            None
        } else {
            let key = std::env::var(&cfg.api_key_env).map_err(|_| {
                LlmError::Config(format!("environment variable {} is not set", cfg.api_key_env))
            })?;
            Some(key)
        };
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, api_key, agent })
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.cfg
    }

    fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
            "messages": [{"role": "user", "content": prompt}],
        })
    }
}

fn classify_transport(err: ureq::Error) -> LlmError {
    match err {
        ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed => {
            LlmError::Transient(err.to_string())
        }
        other => LlmError::Endpoint {
            status: None,
            message: other.to_string(),
        },
    }
}

impl LlmClient for HttpClient {
    fn generate(&self, prompt: &str) -> Result<String, LlmError> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(self.request_body(prompt)).map_err(classify_transport)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(classify_transport)?;
        match status {
            200..=299 => parse_chat_response(&body),
            429 | 500..=599 => Err(LlmError::Transient(format!("HTTP {status}: {}", truncate(&body, 200)))),
            _ => Err(LlmError::Endpoint {
                status: Some(status),
                message: truncate(&body, 200).to_string(),
            }),
        }
    }

    fn name(&self) -> String {
        format!("http:{}@{}", self.cfg.model, self.cfg.base_url)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_mock() {
        let m = MockClient::table(HashMap::from([("p".into(), "g".into())]), None);
        assert_eq!(run_inference(&m, "p", &RetryPolicy::immediate()).unwrap(), "g");
        assert!(matches!(m.generate("q"), Err(LlmError::Endpoint { .. })));
    }

    #[test]
    fn retries_transient_failures() {
        let m = MockClient::fixed("ok").failing_first(vec![
            LlmError::Transient("503".into()),
            LlmError::Transient("429".into()),
        ]);
        assert_eq!(run_inference(&m, "p", &RetryPolicy::immediate()).unwrap(), "ok");
        assert_eq!(m.calls(), 3);
    }

    #[test]
    fn gives_up_after_three_retries() {
        let m = MockClient::unreachable();
        let err = run_inference(&m, "p", &RetryPolicy::immediate()).unwrap_err();
        assert!(matches!(err, LlmError::Timeout { attempts: 4, .. }), "{err}");
        assert_eq!(m.calls(), 4);
    }

    #[test]
    fn endpoint_errors_are_not_retried() {
        let m = MockClient::fixed("ok").failing_first(vec![LlmError::Endpoint {
            status: Some(400),
            message: "bad request".into(),
        }]);
        assert!(matches!(
            run_inference(&m, "p", &RetryPolicy::immediate()),
            Err(LlmError::Endpoint { status: Some(400), .. })
        ));
        assert_eq!(m.calls(), 1);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        let secs: Vec<u64> = (0..3).map(|i| p.delay(i).as_secs()).collect();
        assert_eq!(secs, vec![1, 2, 4]);
    }

    #[test]
    fn chat_response_parsing() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"hello"}}]}"#;
        assert_eq!(parse_chat_response(ok).unwrap(), "hello");
        for bad in ["not json", r#"{"choices":[]}"#, r#"{"choices":[{"message":{}}]}"#] {
            assert!(matches!(parse_chat_response(bad), Err(LlmError::Endpoint { .. })), "{bad}");
        }
    }

    #[test]
    fn missing_api_key_is_a_config_error() {
        let cfg = LlmEndpointConfig {
            api_key_env: "DPTEXT_TEST_KEY_THAT_IS_NEVER_SET".into(),
            ..LlmEndpointConfig::remote()
        };
        assert!(matches!(HttpClient::new(cfg), Err(LlmError::Config(_))));
    }

    #[test]
    fn endpoint_defaults() {
        assert_eq!(LlmEndpointConfig::remote().temperature, 0.5);
        assert_eq!(LlmEndpointConfig::restoration().temperature, 0.0);
        assert_eq!(LlmEndpointConfig::remote().max_output_tokens, 100);
        let bad = LlmEndpointConfig { temperature: -1.0, ..LlmEndpointConfig::remote() };
        assert!(bad.validate().is_err());
    }
}

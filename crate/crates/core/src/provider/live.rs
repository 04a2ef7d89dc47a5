use std::time::Duration;

use serde_json::{json, Value};

use super::{CompletionRequest, Provider, ProviderError};

pub const ENV_BASE_URL: &str = "PROVIDER_BASE_URL";
pub const ENV_API_KEY: &str = "PROVIDER_API_KEY";
pub const ENV_MODEL: &str = "PROVIDER_MODEL";

#[derive(Debug, Clone)]
pub struct LiveClientConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    /// Retries after the first attempt, for transport errors and 5xx.
    pub max_retries: u32,
    /// Delay before retry `n` is `backoff_base * 2^n`.
    pub backoff_base: Duration,
    pub timeout: Duration,
    pub max_request_chars: usize,
}

impl LiveClientConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            api_key: None,
            model: model.into(),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            timeout: Duration::from_secs(120),
            max_request_chars: 400_000,
        }
    }

    /// Reads `PROVIDER_BASE_URL`, `PROVIDER_MODEL` and (optionally)
    /// `PROVIDER_API_KEY`. Returns `None` if either required var is unset.
    pub fn from_env() -> Option<Self> {
        let base = std::env::var(ENV_BASE_URL).ok().filter(|v| !v.is_empty())?;
        let model = std::env::var(ENV_MODEL).ok().filter(|v| !v.is_empty())?;
        let mut config = Self::new(base, model);
        config.api_key = std::env::var(ENV_API_KEY).ok().filter(|v| !v.is_empty());
        Some(config)
    }

    fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Blocking chat-completions client with bounded exponential-backoff retry.
#[derive(Debug, Clone)]
pub struct LiveClient {
    config: LiveClientConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(ProviderError),
}

impl LiveClient {
    pub fn new(config: LiveClientConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &LiveClientConfig {
        &self.config
    }

    fn body(&self, request: &CompletionRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        if let Some(stop) = &request.stop {
            body["stop"] = json!(stop);
        }
        body
    }

    fn attempt(&self, url: &str, body: &str) -> Attempt {
        let mut builder = self
            .agent
            .post(url)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = match builder.send(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        match status {
            200..=299 => match extract_content(&text) {
                Ok(content) => Attempt::Done(content),
                Err(e) => Attempt::Fail(e),
            },
            400..=499 => Attempt::Fail(ProviderError::Rejected { status, body: text }),
            _ => Attempt::Retry(format!("HTTP {status}: {text}")),
        }
    }
}

fn extract_content(body: &str) -> Result<String, ProviderError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
    value["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_owned)
        .ok_or_else(|| ProviderError::BadResponse("missing choices[0].message.content".into()))
}

impl Provider for LiveClient {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let chars = request.total_chars();
        if chars > self.config.max_request_chars {
            return Err(ProviderError::RequestTooLarge {
                chars,
                limit: self.config.max_request_chars,
            });
        }
        let url = self.config.endpoint();
        let body = self.body(request).to_string();
        let mut last_error = String::new();
        for attempt in 0..=self.config.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.config.backoff_base * 2u32.saturating_pow(attempt - 1));
            }
            match self.attempt(&url, &body) {
                Attempt::Done(content) => return Ok(content),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => {
                    tracing::warn!(attempt, error = %e, "provider call failed");
                    last_error = e;
                }
            }
        }
        Err(ProviderError::Unavailable {
            attempts: self.config.max_retries + 1,
            last_error,
        })
    }
}

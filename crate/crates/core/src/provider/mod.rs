//! Chat-completion backends.
//!
//! Every pipeline stage talks to the model through [`Provider`]. Two
//! implementations ship: [`LiveClient`] speaks the common chat-completions
//! HTTP contract, and [`ScriptedProvider`] answers from an ordered list of
//! prompt matchers so whole episodes can be replayed without a model.

mod live;
mod scripted;

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use live::{LiveClient, LiveClientConfig, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL};
pub use scripted::{
    load_policy, Matcher, PolicyEntry, PolicyError, ScriptedPolicy, ScriptedProvider,
};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("no scripted response matches the prompt (prompt starts with {0:?})")]
    Script(String),
    #[error("provider unavailable after {attempts} attempts: {last_error}")]
    Unavailable { attempts: u32, last_error: String },
    #[error("provider rejected the request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("request of {chars} chars exceeds the {limit}-char limit")]
    RequestTooLarge { chars: usize, limit: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl CompletionRequest {
    /// A single-user-message request with the pipeline defaults
    /// (temperature 0, 1024 output tokens).
    pub fn prompt(text: impl Into<String>) -> Self {
        Self {
            messages: vec![ChatMessage::user(text)],
            temperature: 0.0,
            max_output_tokens: 1024,
            stop: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.messages.is_empty() {
            return Err(ProviderError::InvalidRequest("no messages".into()));
        }
        if self
            .messages
            .iter()
            .any(|m| matches!(m.role, Role::User | Role::System) && m.content.trim().is_empty())
        {
            return Err(ProviderError::InvalidRequest(
                "empty user or system message".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest("negative temperature".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(ProviderError::InvalidRequest(
                "max_output_tokens is zero".into(),
            ));
        }
        Ok(())
    }

    /// The text scripted matchers run against: message contents joined by
    /// blank lines.
    pub fn rendered(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn total_chars(&self) -> usize {
        self.messages
            .iter()
            .map(|m| m.content.chars().count())
            .sum()
    }
}

/// A chat-completion backend. Implementations must be callable from many
/// episode runners at once.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for &P {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        (**self).complete(request)
    }
}

/// Adapts a closure into a provider.
pub struct FnProvider<F>(pub F);

impl<F> Provider for FnProvider<F>
where
    F: Fn(&CompletionRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        (self.0)(request)
    }
}

/// One prompt/response exchange captured by [`Recorder`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exchange {
    pub prompt: String,
    pub response: Result<String, ProviderError>,
}

/// Wraps a provider and keeps every rendered prompt it was sent.
pub struct Recorder<P> {
    inner: P,
    log: Mutex<Vec<Exchange>>,
}

impl<P: Provider> Recorder<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn exchanges(&self) -> Vec<Exchange> {
        self.log.lock().expect("recorder lock poisoned").clone()
    }

    pub fn prompts(&self) -> Vec<String> {
        self.exchanges().into_iter().map(|e| e.prompt).collect()
    }
}

impl<P: Provider> Provider for Recorder<P> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let response = self.inner.complete(request);
        self.log
            .lock()
            .expect("recorder lock poisoned")
            .push(Exchange {
                prompt: request.rendered(),
                response: response.clone(),
            });
        response
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_validation() {
        assert!(CompletionRequest::prompt("hi").validate().is_ok());
        let mut empty = CompletionRequest::prompt("hi");
        empty.messages.clear();
        assert!(empty.validate().is_err());
        assert!(CompletionRequest::prompt("  ").validate().is_err());
        let mut hot = CompletionRequest::prompt("hi");
        hot.temperature = -1.0;
        assert!(hot.validate().is_err());
    }

    #[test]
    fn recorder_captures_prompts() {
        let rec = Recorder::new(FnProvider(|r: &CompletionRequest| {
            Ok(r.rendered().to_uppercase())
        }));
        assert_eq!(
            rec.complete(&CompletionRequest::prompt("abc")).unwrap(),
            "ABC"
        );
        assert_eq!(rec.prompts(), vec!["abc".to_owned()]);
    }
}

//! Domain types shared by every stage of the pipeline.
//!
//! All values here are plain data: once built they are never mutated in
//! place by the engines, so they can be shared freely between concurrent
//! episode runners.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Reserved action name that ends an episode.
pub const FINISH: &str = "Finish";
/// Key inside a Finish action's args that carries the answer.
pub const ANSWER_KEY: &str = "Answer";
/// Reserved give-up action understood by the depth-first baseline.
pub const RESTART: &str = "Restart";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("instruction text is empty")]
    EmptyInstruction,
    #[error("invalid tool name {0:?}: expected letters, digits or underscore")]
    InvalidToolName(String),
    #[error("tool name {0:?} is reserved")]
    ReservedToolName(String),
    #[error("duplicate tool name {0:?} in catalog")]
    DuplicateTool(String),
    #[error("tool {tool:?} has a required parameter without a name")]
    UnnamedParam { tool: String },
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

/// A user request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_label: Option<String>,
}

impl Instruction {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            subset_label: None,
        }
    }

    pub fn with_subset(mut self, label: impl Into<String>) -> Self {
        self.subset_label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.text.trim().is_empty() {
            return Err(ValidationError::EmptyInstruction);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    /// Semantic type tag, e.g. `string`, `number`, `date`.
    #[serde(rename = "type", default = "default_param_type")]
    pub type_tag: String,
    #[serde(default)]
    pub required: bool,
    #[serde(default)]
    pub description: String,
}

fn default_param_type() -> String {
    "string".to_owned()
}

impl ParamSpec {
    pub fn required(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            type_tag: default_param_type(),
            required: true,
            description: description.into(),
        }
    }

    pub fn optional(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            required: false,
            ..Self::required(name, description)
        }
    }
}

/// A callable tool as advertised to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub params: Vec<ParamSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

impl ToolSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            params: Vec::new(),
            category: None,
        }
    }

    pub fn with_param(mut self, param: ParamSpec) -> Self {
        self.params.push(param);
        self
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        if !is_identifier(&self.name) {
            return Err(ValidationError::InvalidToolName(self.name.clone()));
        }
        if self.name == FINISH || self.name == RESTART {
            return Err(ValidationError::ReservedToolName(self.name.clone()));
        }
        if self
            .params
            .iter()
            .any(|p| p.required && p.name.trim().is_empty())
        {
            return Err(ValidationError::UnnamedParam {
                tool: self.name.clone(),
            });
        }
        Ok(())
    }

    /// Names of required parameters, in declaration order.
    pub fn required_params(&self) -> impl Iterator<Item = &str> {
        self.params
            .iter()
            .filter(|p| p.required)
            .map(|p| p.name.as_str())
    }
}

/// Checks every tool and that names are unique.
pub fn validate_catalog(tools: &[ToolSpec]) -> Result<(), ValidationError> {
    let mut seen = HashSet::new();
    for tool in tools {
        tool.validate()?;
        if !seen.insert(tool.name.as_str()) {
            return Err(ValidationError::DuplicateTool(tool.name.clone()));
        }
    }
    Ok(())
}

pub fn is_identifier(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// A scalar argument value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Bool(bool),
    Number(serde_json::Number),
    Text(String),
}

/// Argument values are scalars or flat lists of scalars. Anything nested is
/// carried as its JSON text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArgValue {
    Bool(bool),
    Number(serde_json::Number),
    Text(String),
    List(Vec<Scalar>),
}

impl ArgValue {
    pub fn text(s: impl Into<String>) -> Self {
        ArgValue::Text(s.into())
    }

    /// Plain-text form, used when substituting into URLs and answers.
    pub fn as_plain_text(&self) -> String {
        match self {
            ArgValue::Text(s) => s.clone(),
            ArgValue::Bool(b) => b.to_string(),
            ArgValue::Number(n) => n.to_string(),
            ArgValue::List(items) => items
                .iter()
                .map(|s| match s {
                    Scalar::Text(t) => t.clone(),
                    Scalar::Bool(b) => b.to_string(),
                    Scalar::Number(n) => n.to_string(),
                })
                .collect::<Vec<_>>()
                .join(","),
        }
    }

    fn write_canonical(&self, out: &mut String) {
        match self {
            ArgValue::Text(s) => out.push_str(&quote(s)),
            ArgValue::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
            ArgValue::Number(n) => out.push_str(&n.to_string()),
            ArgValue::List(items) => {
                out.push('[');
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        out.push_str(", ");
                    }
                    match item {
                        Scalar::Text(s) => out.push_str(&quote(s)),
                        Scalar::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
                        Scalar::Number(n) => out.push_str(&n.to_string()),
                    }
                }
                out.push(']');
            }
        }
    }
}

fn quote(s: &str) -> String {
    serde_json::Value::String(s.to_owned()).to_string()
}

fn scalar_from_json(value: &serde_json::Value) -> Option<Scalar> {
    match value {
        serde_json::Value::Bool(b) => Some(Scalar::Bool(*b)),
        serde_json::Value::Number(n) => Some(Scalar::Number(n.clone())),
        serde_json::Value::String(s) => Some(Scalar::Text(s.clone())),
        _ => None,
    }
}

impl From<&serde_json::Value> for ArgValue {
    fn from(value: &serde_json::Value) -> Self {
        match value {
            serde_json::Value::Bool(b) => ArgValue::Bool(*b),
            serde_json::Value::Number(n) => ArgValue::Number(n.clone()),
            serde_json::Value::String(s) => ArgValue::Text(s.clone()),
            serde_json::Value::Array(items) => {
                match items
                    .iter()
                    .map(scalar_from_json)
                    .collect::<Option<Vec<_>>>()
                {
                    Some(list) => ArgValue::List(list),
                    None => ArgValue::Text(value.to_string()),
                }
            }
            serde_json::Value::Null | serde_json::Value::Object(_) => {
                ArgValue::Text(value.to_string())
            }
        }
    }
}

impl From<&str> for ArgValue {
    fn from(s: &str) -> Self {
        ArgValue::Text(s.to_owned())
    }
}

impl From<String> for ArgValue {
    fn from(s: String) -> Self {
        ArgValue::Text(s)
    }
}

impl From<i64> for ArgValue {
    fn from(n: i64) -> Self {
        ArgValue::Number(n.into())
    }
}

impl From<bool> for ArgValue {
    fn from(b: bool) -> Self {
        ArgValue::Bool(b)
    }
}

/// Tool arguments. Keys are kept sorted so rendering is order-insensitive.
pub type Args = BTreeMap<String, ArgValue>;

/// Builds an `Args` map from `(key, value)` pairs.
pub fn args<K, V, I>(pairs: I) -> Args
where
    I: IntoIterator<Item = (K, V)>,
    K: Into<String>,
    V: Into<ArgValue>,
{
    pairs
        .into_iter()
        .map(|(k, v)| (k.into(), v.into()))
        .collect()
}

/// Canonical `key=value, ...` rendering with sorted keys.
pub fn render_args(args: &Args) -> String {
    let mut out = String::new();
    for (i, (key, value)) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        out.push_str(key);
        out.push('=');
        value.write_canonical(&mut out);
    }
    out
}

/// Stable 16-hex-digit digest of the canonical argument rendering.
pub fn args_digest(args: &Args) -> String {
    let hash = Sha256::digest(render_args(args).as_bytes());
    let mut out = String::with_capacity(16);
    for byte in hash.iter().take(8) {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionKind {
    ToolCall,
    Finish,
}

/// One proposal from the router: call a tool, or finish with an answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_name: Option<String>,
    #[serde(default)]
    pub args: Args,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thought: Option<String>,
}

impl Action {
    pub fn tool_call(tool_name: impl Into<String>, args: Args) -> Self {
        Self {
            kind: ActionKind::ToolCall,
            tool_name: Some(tool_name.into()),
            args,
            thought: None,
        }
    }

    pub fn finish(answer: impl Into<String>) -> Self {
        let mut args = Args::new();
        args.insert(ANSWER_KEY.to_owned(), ArgValue::Text(answer.into()));
        Self {
            kind: ActionKind::Finish,
            tool_name: None,
            args,
            thought: None,
        }
    }

    pub fn with_thought(mut self, thought: impl Into<String>) -> Self {
        self.thought = Some(thought.into());
        self
    }

    pub fn is_finish(&self) -> bool {
        self.kind == ActionKind::Finish
    }

    /// Tool name for a tool call, `Finish` otherwise.
    pub fn name(&self) -> &str {
        match self.kind {
            ActionKind::Finish => FINISH,
            ActionKind::ToolCall => self.tool_name.as_deref().unwrap_or_default(),
        }
    }

    pub fn answer(&self) -> Option<String> {
        if !self.is_finish() {
            return None;
        }
        self.args.get(ANSWER_KEY).map(ArgValue::as_plain_text)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        match self.kind {
            ActionKind::Finish => match self.answer() {
                Some(answer) if !answer.trim().is_empty() => Ok(()),
                _ => Err(ValidationError::InvalidAction(
                    "Finish requires a non-empty Answer".into(),
                )),
            },
            ActionKind::ToolCall => match self.tool_name.as_deref() {
                Some(name) if !name.is_empty() => Ok(()),
                _ => Err(ValidationError::InvalidAction(
                    "tool call without a tool name".into(),
                )),
            },
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name(), render_args(&self.args))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObservationStatus {
    Success,
    ToolError,
    Timeout,
    MalformedResponse,
}

impl fmt::Display for ObservationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ObservationStatus::Success => "Success",
            ObservationStatus::ToolError => "ToolError",
            ObservationStatus::Timeout => "Timeout",
            ObservationStatus::MalformedResponse => "MalformedResponse",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<u16>,
    pub message: String,
}

/// The raw outcome of executing one tool call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub tool_name: String,
    #[serde(default)]
    pub args_echo: Args,
    pub status: ObservationStatus,
    #[serde(default)]
    pub payload: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    #[serde(default)]
    pub latency_ms: u64,
}

impl Observation {
    pub fn success(tool_name: impl Into<String>, args: &Args, payload: impl Into<String>) -> Self {
        Self {
            tool_name: tool_name.into(),
            args_echo: args.clone(),
            status: ObservationStatus::Success,
            payload: payload.into(),
            error: None,
            latency_ms: 0,
        }
    }

    pub fn failure(
        tool_name: impl Into<String>,
        args: &Args,
        status: ObservationStatus,
        code: Option<u16>,
        message: impl Into<String>,
    ) -> Self {
        debug_assert!(status != ObservationStatus::Success);
        Self {
            tool_name: tool_name.into(),
            args_echo: args.clone(),
            status,
            payload: String::new(),
            error: Some(ErrorInfo {
                code,
                message: message.into(),
            }),
            latency_ms: 0,
        }
    }

    pub fn with_latency_ms(mut self, ms: u64) -> Self {
        self.latency_ms = ms;
        self
    }

    pub fn with_payload(mut self, payload: impl Into<String>) -> Self {
        self.payload = payload.into();
        self
    }

    pub fn is_success(&self) -> bool {
        self.status == ObservationStatus::Success
    }

    /// Human-readable error descriptor, e.g. `ToolError (HTTP 500): boom`.
    pub fn error_descriptor(&self) -> Option<String> {
        self.error.as_ref().map(|e| match e.code {
            Some(code) => format!("{} (HTTP {code}): {}", self.status, e.message),
            None => format!("{}: {}", self.status, e.message),
        })
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        match (self.status, &self.error) {
            (ObservationStatus::Success, Some(_)) => Err(ValidationError::InvalidObservation(
                "success carries an error descriptor".into(),
            )),
            (ObservationStatus::Success, None) => Ok(()),
            (_, None) => Err(ValidationError::InvalidObservation(
                "failure without an error descriptor".into(),
            )),
            (_, Some(_)) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultEntry {
    pub text: String,
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub tool_name: String,
    pub args_digest: String,
    pub reason: String,
    pub step: u32,
}

impl FailureEntry {
    pub fn render(&self) -> String {
        format!("{}({}): {}", self.tool_name, self.args_digest, self.reason)
    }
}

/// Summarized task state: what has been found so far, and what went wrong.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct State {
    #[serde(default)]
    pub current_results: Vec<ResultEntry>,
    #[serde(default)]
    pub failure_history: Vec<FailureEntry>,
}

pub const NO_RESULTS: &str = "Current results: (none).";
pub const NO_FAILURES: &str = "Failure history: (none).";

impl State {
    /// The empty initial state.
    pub fn initial() -> Self {
        Self::default()
    }

    pub fn is_initial(&self) -> bool {
        self.current_results.is_empty() && self.failure_history.is_empty()
    }

    /// Two-section text layout consumed by the router prompt.
    pub fn render(&self) -> String {
        let mut out = String::new();
        if self.current_results.is_empty() {
            out.push_str(NO_RESULTS);
        } else {
            out.push_str("Current results:");
            for (i, entry) in self.current_results.iter().enumerate() {
                let _ = write!(out, "\n{}. [step {}] {}", i + 1, entry.step, entry.text);
            }
        }
        out.push('\n');
        if self.failure_history.is_empty() {
            out.push_str(NO_FAILURES);
        } else {
            out.push_str("Failure history:");
            for (i, entry) in self.failure_history.iter().enumerate() {
                let _ = write!(out, "\n{}. [step {}] {}", i + 1, entry.step, entry.render());
            }
        }
        out
    }

    /// Length of [`State::render`] in characters.
    pub fn rendered_len(&self) -> usize {
        self.render().chars().count()
    }

    pub fn has_failure(&self, tool_name: &str, args_digest: &str) -> bool {
        self.failure_history
            .iter()
            .any(|f| f.tool_name == tool_name && f.args_digest == args_digest)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        let increasing = |steps: &mut dyn Iterator<Item = u32>| {
            let mut last = None;
            for s in steps {
                if last.is_some_and(|l| s <= l) {
                    return false;
                }
                last = Some(s);
            }
            true
        };
        if !increasing(&mut self.current_results.iter().map(|r| r.step)) {
            return Err(ValidationError::InvalidState(
                "result step indices not strictly increasing".into(),
            ));
        }
        if !increasing(&mut self.failure_history.iter().map(|f| f.step)) {
            return Err(ValidationError::InvalidState(
                "failure step indices not strictly increasing".into(),
            ));
        }
        let mut seen = HashSet::new();
        for f in &self.failure_history {
            if !seen.insert((f.tool_name.as_str(), f.args_digest.as_str())) {
                return Err(ValidationError::InvalidState(format!(
                    "duplicate failure entry for {}({})",
                    f.tool_name, f.args_digest
                )));
            }
        }
        Ok(())
    }
}

/// Truncates `text` to at most `max_chars` characters.
pub fn truncate_chars(text: &str, max_chars: usize) -> &str {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => &text[..idx],
        None => text,
    }
}

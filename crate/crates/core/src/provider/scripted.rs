use std::path::Path;

use regex::Regex;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use super::{CompletionRequest, Provider, ProviderError};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub enum Matcher {
    Substring(String),
    Regex(Regex),
}

impl Matcher {
    pub fn is_match(&self, prompt: &str) -> bool {
        match self {
            Matcher::Substring(s) => prompt.contains(s.as_str()),
            Matcher::Regex(re) => re.is_match(prompt),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PolicyEntry {
    pub matcher: Matcher,
    pub response: String,
}

/// Ordered prompt matchers; the first match wins, then the default.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    pub entries: Vec<PolicyEntry>,
    pub default: Option<String>,
}

impl ScriptedPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn on(mut self, substring: impl Into<String>, response: impl Into<String>) -> Self {
        self.entries.push(PolicyEntry {
            matcher: Matcher::Substring(substring.into()),
            response: response.into(),
        });
        self
    }

    /// Adds a regex entry. Panics on an invalid pattern; use files for
    /// untrusted input.
    pub fn on_regex(mut self, pattern: &str, response: impl Into<String>) -> Self {
        self.entries.push(PolicyEntry {
            matcher: Matcher::Regex(Regex::new(pattern).expect("invalid regex")),
            response: response.into(),
        });
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default = Some(response.into());
        self
    }

    pub fn respond(&self, prompt: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| e.matcher.is_match(prompt))
            .map(|e| e.response.as_str())
            .or(self.default.as_deref())
    }

    /// Parses the policy file format; `origin` only labels errors.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self, PolicyError> {
        if text.trim().is_empty() {
            return Ok(Self::default());
        }
        let file: PolicyFile = serde_json::from_str(text).map_err(|e| PolicyError::Parse {
            path: origin.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let (raw_entries, mut default) = match file {
            PolicyFile::List(items) => (items, None),
            PolicyFile::Object { entries, default } => (entries, default.map(response_text)),
        };
        let mut entries = Vec::with_capacity(raw_entries.len());
        for raw in raw_entries {
            match raw {
                RawItem::Default { default: d } => default = Some(response_text(d)),
                RawItem::Entry {
                    pattern,
                    response,
                    is_regex,
                } => {
                    let matcher = if is_regex {
                        let re = Regex::new(&pattern).map_err(|e| PolicyError::Parse {
                            path: origin.to_owned(),
                            line: line_of(text, &pattern),
                            message: format!("invalid regex: {e}"),
                        })?;
                        Matcher::Regex(re)
                    } else {
                        Matcher::Substring(pattern)
                    };
                    entries.push(PolicyEntry {
                        matcher,
                        response: response_text(response),
                    });
                }
            }
        }
        Ok(Self { entries, default })
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PolicyFile {
    List(Vec<RawItem>),
    Object {
        #[serde(default)]
        entries: Vec<RawItem>,
        #[serde(default)]
        default: Option<Value>,
    },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawItem {
    Entry {
        #[serde(rename = "match")]
        pattern: String,
        response: Value,
        #[serde(default)]
        is_regex: bool,
    },
    Default {
        default: Value,
    },
}

/// Responses may be written as JSON values for readability; they are sent
/// back as their compact text.
fn response_text(v: Value) -> String {
    match v {
        Value::String(s) => s,
        other => other.to_string(),
    }
}

fn line_of(text: &str, pattern: &str) -> usize {
    let quoted = serde_json::to_string(pattern).unwrap_or_default();
    text.find(&quoted)
        .map(|idx| text[..idx].matches('\n').count() + 1)
        .unwrap_or(1)
}

/// Loads a policy file, preserving entry order.
pub fn load_policy(path: &Path) -> Result<ScriptedPolicy, PolicyError> {
    let text = std::fs::read_to_string(path).map_err(|source| PolicyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ScriptedPolicy::from_json_str(&text, &path.display().to_string())
}

/// Deterministic provider backed by a [`ScriptedPolicy`]. Stateless: the
/// reply is a pure function of the rendered prompt.
#[derive(Debug, Clone)]
pub struct ScriptedProvider {
    policy: ScriptedPolicy,
}

impl ScriptedProvider {
    pub fn new(policy: ScriptedPolicy) -> Self {
        Self { policy }
    }

    pub fn policy(&self) -> &ScriptedPolicy {
        &self.policy
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        request.validate()?;
        let prompt = request.rendered();
        self.policy
            .respond(&prompt)
            .map(str::to_owned)
            .ok_or_else(|| {
                ProviderError::Script(crate::types::truncate_chars(&prompt, 80).to_owned())
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask(p: &ScriptedProvider, text: &str) -> Result<String, ProviderError> {
        p.complete(&CompletionRequest::prompt(text))
    }

    #[test]
    fn first_match_wins() {
        let p = ScriptedProvider::new(
            ScriptedPolicy::new()
                .on("weather", r#"{"action":"get_weather","args":{}}"#)
                .on("weather", "second"),
        );
        assert_eq!(
            ask(&p, "what is the weather").unwrap(),
            r#"{"action":"get_weather","args":{}}"#
        );
    }

    #[test]
    fn default_applies_when_nothing_matches() {
        let p = ScriptedProvider::new(ScriptedPolicy::new().on("a", "A").with_default("X"));
        assert_eq!(ask(&p, "zzz").unwrap(), "X");
    }

    #[test]
    fn deterministic() {
        let p = ScriptedProvider::new(ScriptedPolicy::new().on_regex("^w", "W"));
        assert_eq!(ask(&p, "wx").unwrap(), ask(&p, "wx").unwrap());
    }

    #[test]
    fn no_match_no_default_errors() {
        let p = ScriptedProvider::new(ScriptedPolicy::new());
        assert!(matches!(ask(&p, "x"), Err(ProviderError::Script(_))));
    }

    #[test]
    fn file_preserves_order_and_duplicates() {
        let text = r#"{
  "entries": [
    {"match": "dup", "response": "first"},
    {"match": "dup", "response": "second"},
    {"match": "^r.*x$", "response": {"action": "Finish", "args": {"Answer": "x"}}, "is_regex": true}
  ]
}"#;
        let policy = ScriptedPolicy::from_json_str(text, "mem").unwrap();
        assert_eq!(policy.entries.len(), 3);
        assert_eq!(policy.respond("dup"), Some("first"));
        assert_eq!(
            policy.respond("rox"),
            Some(r#"{"action":"Finish","args":{"Answer":"x"}}"#)
        );
        assert!(policy.default.is_none());
    }

    #[test]
    fn list_form_with_default_item() {
        let text = r#"[{"match": "a", "response": "A"}, {"default": "D"}]"#;
        let policy = ScriptedPolicy::from_json_str(text, "mem").unwrap();
        assert_eq!(policy.entries.len(), 1);
        assert_eq!(policy.respond("b"), Some("D"));
    }

    #[test]
    fn empty_file_is_empty_policy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        std::fs::write(&path, "").unwrap();
        let policy = load_policy(&path).unwrap();
        assert!(policy.entries.is_empty() && policy.default.is_none());
        let p = ScriptedProvider::new(policy);
        assert!(ask(&p, "anything").is_err());
    }

    #[test]
    fn malformed_file_reports_line() {
        let text = "{\n  \"entries\": [\n    {\"match\": \"a\", \"response\": }\n  ]\n}";
        match ScriptedPolicy::from_json_str(text, "mem") {
            Err(PolicyError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad_regex = "[\n{\"match\": \"(\", \"response\": \"x\", \"is_regex\": true}\n]";
        match ScriptedPolicy::from_json_str(bad_regex, "mem") {
            Err(PolicyError::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("invalid regex"));
            }
            other => panic!("expected regex error, got {other:?}"),
        }
    }
}

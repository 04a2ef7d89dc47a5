//! Simulated open-world APIs.
//!
//! A [`Scenario`] scripts how each tool answers: successes, HTTP-style
//! errors, timeouts, and verbose payloads that bury the useful line in
//! filler. A [`SandboxSession`] replays those behaviors for one episode.
//! [`LiveInvoker`] is the real-HTTP counterpart.

mod live;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::Episode;
use crate::types::{validate_catalog, Args, Instruction, Observation, ObservationStatus, ToolSpec};

pub use live::{EndpointSpec, LiveEndpoint, LiveInvoker, DEFAULT_LIVE_TIMEOUT_MS};

/// Simulated latency reported for a scripted timeout.
pub const SIMULATED_TIMEOUT_MS: u64 = 15_000;

/// Executes tool calls on behalf of an engine.
pub trait ToolExecutor {
    fn invoke(&mut self, tool_name: &str, args: &Args) -> Observation;
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("scenario {scenario:?}: behavior references undeclared tool {tool:?}")]
    UndeclaredTool { scenario: String, tool: String },
    #[error("scenario {scenario:?}: {message}")]
    Invalid { scenario: String, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Repeat {
    #[default]
    Once,
    Forever,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BehaviorKind {
    Success {
        payload: String,
    },
    Error {
        code: u16,
        message: String,
    },
    Timeout,
    /// `payload` embedded in filler; the observation is exactly `length` chars.
    Verbose {
        payload: String,
        length: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Behavior {
    #[serde(flatten)]
    pub kind: BehaviorKind,
    #[serde(default)]
    pub repeat: Repeat,
}

impl Behavior {
    pub fn once(kind: BehaviorKind) -> Self {
        Self {
            kind,
            repeat: Repeat::Once,
        }
    }

    pub fn forever(kind: BehaviorKind) -> Self {
        Self {
            kind,
            repeat: Repeat::Forever,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PassCondition {
    ContainsAll(Vec<String>),
    Regex(String),
    Exact(String),
}

impl PassCondition {
    pub fn is_satisfied_by(&self, answer: &str) -> bool {
        match self {
            PassCondition::ContainsAll(parts) => parts.iter().all(|p| answer.contains(p.as_str())),
            PassCondition::Regex(pattern) => {
                Regex::new(pattern).is_ok_and(|re| re.is_match(answer))
            }
            PassCondition::Exact(expected) => answer.trim() == expected.trim(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub instruction: Instruction,
    pub tools: Vec<ToolSpec>,
    pub behaviors: BTreeMap<String, Vec<Behavior>>,
    pub pass_condition: PassCondition,
    /// Scripted policy for this scenario, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PathBuf>,
    /// Whether a competent agent can pass; unsolvable scenarios are kept to
    /// exercise budget exhaustion.
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub solvable: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |message: String| ScenarioError::Invalid {
            scenario: self.id.clone(),
            message,
        };
        self.instruction
            .validate()
            .map_err(|e| invalid(e.to_string()))?;
        if self.tools.is_empty() {
            return Err(invalid("no tools declared".into()));
        }
        validate_catalog(&self.tools).map_err(|e| invalid(e.to_string()))?;
        for (tool, behaviors) in &self.behaviors {
            if !self.tools.iter().any(|t| &t.name == tool) {
                return Err(ScenarioError::UndeclaredTool {
                    scenario: self.id.clone(),
                    tool: tool.clone(),
                });
            }
            if behaviors.is_empty() {
                return Err(invalid(format!("empty behavior list for {tool:?}")));
            }
            for b in behaviors {
                if let BehaviorKind::Verbose { payload, length } = &b.kind {
                    if *length < payload.chars().count() {
                        return Err(invalid(format!(
                            "verbose behavior for {tool:?}: length {length} shorter than its payload"
                        )));
                    }
                }
            }
        }
        if let PassCondition::Regex(p) = &self.pass_condition {
            Regex::new(p).map_err(|e| invalid(format!("pass_condition regex: {e}")))?;
        }
        Ok(())
    }

    pub fn session(&self) -> SandboxSession<'_> {
        SandboxSession::new(self)
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }
}

/// Parses and validates a scenario file. A relative `policy` path is
/// resolved against the scenario's directory.
pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let parse = |message: String| ScenarioError::Parse {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| parse(e.to_string()))?;
    let mut scenario: Scenario = serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
    scenario.validate()?;
    if let Some(policy) = &scenario.policy {
        if policy.is_relative() {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            scenario.policy = Some(base.join(policy));
        }
    }
    Ok(scenario)
}

/// Every `*.scenario.json` under `dir` (non-recursive), sorted by file name.
pub fn scenario_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.ends_with(".scenario.json"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Loads every scenario in `dir`, failing on the first bad file.
pub fn load_scenario_dir(dir: &Path) -> Result<Vec<Scenario>, ScenarioError> {
    let files = scenario_files(dir).map_err(|e| ScenarioError::Parse {
        path: dir.display().to_string(),
        message: e.to_string(),
    })?;
    files.iter().map(|p| load_scenario(p)).collect()
}

/// True iff the episode finished and its answer meets the pass condition.
pub fn check_pass(scenario: &Scenario, episode: &Episode) -> bool {
    episode
        .answer()
        .is_some_and(|answer| scenario.pass_condition.is_satisfied_by(answer))
}

const FILLER_WORDS: &[&str] = &[
    "lorem",
    "ipsum",
    "dolor",
    "sit",
    "amet",
    "consectetur",
    "adipiscing",
    "elit",
    "sed",
    "do",
    "eiusmod",
    "tempor",
    "incididunt",
    "ut",
    "labore",
    "et",
    "dolore",
    "magna",
    "aliqua",
    "enim",
    "ad",
    "minim",
    "veniam",
    "quis",
    "nostrud",
    "exercitation",
    "ullamco",
    "laboris",
    "nisi",
    "aliquip",
    "ex",
    "ea",
    "commodo",
    "consequat",
];

fn filler(len: usize, seed: usize) -> String {
    let mut out = String::with_capacity(len + 16);
    let mut i = seed;
    while out.len() < len {
        out.push_str(FILLER_WORDS[i % FILLER_WORDS.len()]);
        out.push(' ');
        i = i.wrapping_mul(31).wrapping_add(7);
    }
    out.truncate(len);
    out
}

/// `payload` centered in deterministic filler; exactly `length` chars when
/// `length >= payload` length.
pub fn verbose_payload(payload: &str, length: usize) -> String {
    let rel = payload.chars().count();
    let pad = length.saturating_sub(rel);
    let before = pad / 2;
    let after = pad - before;
    let mut out = filler(before, 1);
    out.push_str(payload);
    out.push_str(&filler(after, 5));
    out
}

/// Name of the first required parameter absent from `args`.
pub fn missing_required<'t>(tool: &'t ToolSpec, args: &Args) -> Option<&'t str> {
    tool.required_params().find(|p| !args.contains_key(*p))
}

/// Per-episode cursor over a scenario's behaviors.
#[derive(Debug, Clone)]
pub struct SandboxSession<'a> {
    scenario: &'a Scenario,
    cursors: HashMap<&'a str, usize>,
}

impl<'a> SandboxSession<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        Self {
            scenario,
            cursors: HashMap::new(),
        }
    }

    /// Number of behaviors consumed for `tool`.
    pub fn consumed(&self, tool: &str) -> usize {
        self.cursors.get(tool).copied().unwrap_or(0)
    }

    fn next_behavior(&mut self, tool: &'a str) -> Option<&'a Behavior> {
        let list = self.scenario.behaviors.get(tool)?;
        let cursor = self.cursors.entry(tool).or_insert(0);
        let behavior = list.get(*cursor)?;
        if behavior.repeat == Repeat::Once {
            *cursor += 1;
        }
        Some(behavior)
    }
}

impl ToolExecutor for SandboxSession<'_> {
    fn invoke(&mut self, tool_name: &str, args: &Args) -> Observation {
        let Some(spec) = self.scenario.tool(tool_name) else {
            return Observation::failure(
                tool_name,
                args,
                ObservationStatus::ToolError,
                None,
                format!("unknown tool: {tool_name}"),
            );
        };
        if let Some(param) = missing_required(spec, args) {
            return Observation::failure(
                tool_name,
                args,
                ObservationStatus::ToolError,
                Some(400),
                format!("missing required parameter: {param}"),
            );
        }
        let Some(behavior) = self.next_behavior(spec.name.as_str()) else {
            return Observation::failure(
                tool_name,
                args,
                ObservationStatus::ToolError,
                Some(503),
                format!("no response available from {tool_name}"),
            );
        };
        match &behavior.kind {
            BehaviorKind::Success { payload } => {
                Observation::success(tool_name, args, payload.as_str())
            }
            BehaviorKind::Error { code, message } => Observation::failure(
                tool_name,
                args,
                ObservationStatus::ToolError,
                Some(*code),
                message.as_str(),
            ),
            BehaviorKind::Timeout => Observation::failure(
                tool_name,
                args,
                ObservationStatus::Timeout,
                None,
                format!("no response within {SIMULATED_TIMEOUT_MS} ms"),
            )
            .with_latency_ms(SIMULATED_TIMEOUT_MS),
            BehaviorKind::Verbose { payload, length } => {
                Observation::success(tool_name, args, verbose_payload(payload, *length))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::Terminal;
    use crate::types::{args, Action, ParamSpec};

    pub(crate) fn weather_scenario() -> Scenario {
        let mut behaviors = BTreeMap::new();
        behaviors.insert(
            "get_weather".to_owned(),
            vec![
                Behavior::once(BehaviorKind::Error {
                    code: 500,
                    message: "Internal Server Error".into(),
                }),
                Behavior::forever(BehaviorKind::Success {
                    payload: "sunny 29C".into(),
                }),
            ],
        );
        behaviors.insert(
            "search_flights".to_owned(),
            vec![Behavior::forever(BehaviorKind::Verbose {
                payload: "flight UA123 $240".into(),
                length: 8000,
            })],
        );
        Scenario {
            id: "weather".into(),
            instruction: Instruction::new("weather", "What is the weather in Miami?"),
            tools: vec![
                ToolSpec::new("get_weather", "Weather")
                    .with_param(ParamSpec::required("city", "City")),
                ToolSpec::new("search_flights", "Flights"),
            ],
            behaviors,
            pass_condition: PassCondition::ContainsAll(vec!["29".into(), "sunny".into()]),
            policy: None,
            solvable: true,
        }
    }

    #[test]
    fn ordered_consumption() {
        let s = weather_scenario();
        let mut session = s.session();
        let a = args([("city", "Miami")]);
        let first = session.invoke("get_weather", &a);
        assert_eq!(first.status, ObservationStatus::ToolError);
        assert_eq!(first.error.as_ref().unwrap().code, Some(500));
        let second = session.invoke("get_weather", &a);
        assert_eq!(second.status, ObservationStatus::Success);
        assert_eq!(second.payload, "sunny 29C");
        assert_eq!(session.invoke("get_weather", &a).payload, "sunny 29C");
    }

    #[test]
    fn missing_param_does_not_consume() {
        let s = weather_scenario();
        let mut session = s.session();
        let obs = session.invoke("get_weather", &Args::new());
        assert_eq!(obs.status, ObservationStatus::ToolError);
        assert_eq!(
            obs.error.unwrap().message,
            "missing required parameter: city"
        );
        assert_eq!(session.consumed("get_weather"), 0);
        let next = session.invoke("get_weather", &args([("city", "Miami")]));
        assert_eq!(next.error.unwrap().code, Some(500));
    }

    #[test]
    fn unknown_tool() {
        let s = weather_scenario();
        let obs = s.session().invoke("teleport", &Args::new());
        assert_eq!(obs.status, ObservationStatus::ToolError);
        assert!(obs.error.unwrap().message.starts_with("unknown tool"));
    }

    #[test]
    fn verbose_embeds_payload() {
        let s = weather_scenario();
        let obs = s.session().invoke("search_flights", &Args::new());
        assert_eq!(obs.status, ObservationStatus::Success);
        assert_eq!(obs.payload.chars().count(), 8000);
        assert!(obs.payload.contains("flight UA123 $240"));
    }

    #[test]
    fn timeout_behavior() {
        let mut s = weather_scenario();
        s.behaviors.insert(
            "search_flights".into(),
            vec![Behavior::once(BehaviorKind::Timeout)],
        );
        let mut session = s.session();
        let obs = session.invoke("search_flights", &Args::new());
        assert_eq!(obs.status, ObservationStatus::Timeout);
        assert_eq!(obs.latency_ms, SIMULATED_TIMEOUT_MS);
        let exhausted = session.invoke("search_flights", &Args::new());
        assert_eq!(exhausted.status, ObservationStatus::ToolError);
    }

    #[test]
    fn load_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let s = weather_scenario();
        let path = dir.path().join("w.scenario.json");
        std::fs::write(&path, serde_json::to_string_pretty(&s).unwrap()).unwrap();
        let loaded = load_scenario(&path).unwrap();
        assert_eq!(loaded.behaviors.len(), 2);
        assert_eq!(
            loaded.pass_condition,
            PassCondition::ContainsAll(vec!["29".into(), "sunny".into()])
        );
        let raw = std::fs::read_to_string(&path).unwrap();
        assert!(raw.contains("\"contains-all\""));

        let mut bad = s.clone();
        bad.behaviors
            .insert("x".into(), vec![Behavior::once(BehaviorKind::Timeout)]);
        std::fs::write(&path, serde_json::to_string(&bad).unwrap()).unwrap();
        match load_scenario(&path) {
            Err(ScenarioError::UndeclaredTool { tool, .. }) => assert_eq!(tool, "x"),
            other => panic!("{other:?}"),
        }

        let unknown_kind = serde_json::to_string(&s)
            .unwrap()
            .replace("\"verbose\"", "\"psychic\"");
        std::fs::write(&path, unknown_kind).unwrap();
        assert!(matches!(
            load_scenario(&path),
            Err(ScenarioError::Parse { .. })
        ));
    }

    #[test]
    fn relative_policy_is_resolved() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = weather_scenario();
        s.policy = Some("w.policy.json".into());
        let path = dir.path().join("w.scenario.json");
        std::fs::write(&path, serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(
            load_scenario(&path).unwrap().policy.unwrap(),
            dir.path().join("w.policy.json")
        );
    }

    fn episode_with(terminal: Terminal, answer: Option<&str>) -> Episode {
        let s = weather_scenario();
        let mut e = Episode::new(s.instruction.clone(), s.tools.clone(), 30, "sum2act").unwrap();
        if let Some(a) = answer {
            e.push_step(crate::episode::Step::new(
                Action::finish(a),
                None,
                Default::default(),
            ));
        }
        e.finish(terminal);
        e
    }

    #[test]
    fn pass_checks() {
        let s = weather_scenario();
        let ans = "It is sunny, 29°C in Miami";
        assert!(check_pass(
            &s,
            &episode_with(Terminal::Finished { answer: ans.into() }, Some(ans))
        ));
        assert!(!check_pass(
            &s,
            &episode_with(Terminal::BudgetExhausted, None)
        ));
        assert!(!check_pass(
            &s,
            &episode_with(
                Terminal::Finished {
                    answer: "unknown".into()
                },
                Some("unknown")
            )
        ));
    }

    #[test]
    fn pass_condition_kinds() {
        assert!(PassCondition::Regex(r"\b29\b".into()).is_satisfied_by("it is 29 now"));
        assert!(PassCondition::Exact("42".into()).is_satisfied_by(" 42\n"));
        assert!(!PassCondition::Exact("42".into()).is_satisfied_by("420"));
    }
}

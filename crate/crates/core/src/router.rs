//! Action proposal: render the router prompt, ask the model, parse its reply
//! into an [`Action`]. Also hosts the optional task-decomposition stage.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::json::first_object_with_key;
use crate::prompts::{PromptSet, Template};
use crate::provider::{CompletionRequest, Provider, ProviderError};
use crate::types::{
    Action, ActionKind, ArgValue, Args, Instruction, State, ToolSpec, ANSWER_KEY, FINISH,
};

/// Corrective re-asks after a malformed reply.
pub const DEFAULT_PARSE_RETRIES: u32 = 2;

/// Header of the corrective suffix appended on a re-ask.
pub const CORRECTION_HEADER: &str = "### CORRECTION";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum RouterError {
    #[error("malformed model output: {0}")]
    MalformedOutput(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

/// Target task and ordered subtasks attached to router prompts as guidance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub target: String,
    #[serde(default)]
    pub subtasks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouterPrompt {
    pub user_instruction_block: String,
    pub state_block: String,
    pub rules_block: String,
    pub tools_block: String,
}

impl RouterPrompt {
    pub fn render(&self, template: &Template) -> String {
        template.render(&[
            ("instruction", &self.user_instruction_block),
            ("state", &self.state_block),
            ("rules", &self.rules_block),
            ("tools", &self.tools_block),
        ])
    }
}

/// Instruction text, followed by the decomposition lines when present.
pub fn instruction_block(instruction: &Instruction, decomposition: Option<&Task>) -> String {
    let mut out = instruction.text.clone();
    if let Some(task) = decomposition {
        let _ = write!(out, "\nTask: {}", task.target);
        for (i, sub) in task.subtasks.iter().enumerate() {
            let _ = write!(out, "\nSubtask {}: {}", i + 1, sub);
        }
    }
    out
}

pub fn tools_block(tools: &[ToolSpec]) -> String {
    let mut out = String::new();
    for (i, tool) in tools.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(out, "- {}: {}", tool.name, tool.description);
        if tool.params.is_empty() {
            out.push_str(" Parameters: none.");
        } else {
            out.push_str(" Parameters: ");
            for (j, p) in tool.params.iter().enumerate() {
                if j > 0 {
                    out.push_str("; ");
                }
                let req = if p.required { "required" } else { "optional" };
                let _ = write!(out, "{} ({}, {})", p.name, p.type_tag, req);
                if !p.description.is_empty() {
                    let _ = write!(out, ": {}", p.description);
                }
            }
            out.push('.');
        }
    }
    out
}

pub fn build_router_prompt(
    instruction: &Instruction,
    state: &State,
    tools: &[ToolSpec],
    decomposition: Option<&Task>,
    rules: &str,
) -> RouterPrompt {
    RouterPrompt {
        user_instruction_block: instruction_block(instruction, decomposition),
        state_block: state.render(),
        rules_block: rules.to_owned(),
        tools_block: tools_block(tools),
    }
}

fn args_from_map(map: &Map<String, Value>) -> Args {
    map.iter()
        .map(|(k, v)| (k.clone(), ArgValue::from(v)))
        .collect()
}

/// Extracts the first JSON object with an `action` field from `output`.
pub fn parse_action(output: &str) -> Result<Action, RouterError> {
    let malformed = |m: &str| RouterError::MalformedOutput(m.to_owned());
    let obj = first_object_with_key(output, "action")
        .ok_or_else(|| malformed("no JSON object with an \"action\" field"))?;
    let name = obj["action"]
        .as_str()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| malformed("\"action\" must be a non-empty string"))?;
    let args = match obj.get("args") {
        Some(Value::Object(map)) => args_from_map(map),
        _ => return Err(malformed("\"args\" must be an object")),
    };
    let thought = obj
        .get("thought")
        .and_then(Value::as_str)
        .map(str::to_owned);
    let action = if name == FINISH {
        let answer = args
            .get(ANSWER_KEY)
            .map(ArgValue::as_plain_text)
            .unwrap_or_default();
        if answer.trim().is_empty() {
            return Err(malformed("Finish requires a non-empty args.Answer"));
        }
        Action {
            kind: ActionKind::Finish,
            tool_name: None,
            args,
            thought,
        }
    } else {
        Action {
            kind: ActionKind::ToolCall,
            tool_name: Some(name.to_owned()),
            args,
            thought,
        }
    };
    Ok(action)
}

pub fn correction_suffix(error: &str) -> String {
    format!(
        "\n\n{CORRECTION_HEADER}\nYour previous reply could not be used: {error}. \
         Reply again with exactly one JSON object of the form \
         {{\"thought\": \"...\", \"action\": \"...\", \"args\": {{...}}}}."
    )
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Proposal {
    pub action: Action,
    /// Corrective re-asks that were needed.
    pub retries: u32,
}

/// Sends `prompt`, re-asking with a corrective suffix on malformed output
/// up to `max_retries` times.
pub fn propose_from_prompt<P: Provider + ?Sized>(
    provider: &P,
    prompt: &str,
    max_retries: u32,
) -> Result<Proposal, RouterError> {
    let mut text = prompt.to_owned();
    let mut last_error = String::new();
    for attempt in 0..=max_retries {
        if attempt > 0 {
            text = format!("{prompt}{}", correction_suffix(&last_error));
        }
        let reply = provider.complete(&CompletionRequest::prompt(text.as_str()))?;
        match parse_action(&reply) {
            Ok(action) => {
                return Ok(Proposal {
                    action,
                    retries: attempt,
                })
            }
            Err(RouterError::MalformedOutput(e)) => {
                tracing::debug!(attempt, error = %e, "router reply did not parse");
                last_error = e;
            }
            Err(other) => return Err(other),
        }
    }
    Err(RouterError::MalformedOutput(last_error))
}

/// One action-proposal stage of the summarizing loop.
pub fn propose<P: Provider + ?Sized>(
    provider: &P,
    prompts: &PromptSet,
    instruction: &Instruction,
    state: &State,
    tools: &[ToolSpec],
    decomposition: Option<&Task>,
    max_retries: u32,
) -> Result<Proposal, RouterError> {
    let prompt = build_router_prompt(
        instruction,
        state,
        tools,
        decomposition,
        &prompts.router_rules,
    )
    .render(&prompts.router);
    propose_from_prompt(provider, &prompt, max_retries)
}

pub fn parse_task(output: &str) -> Result<Task, RouterError> {
    let obj = first_object_with_key(output, "target").ok_or_else(|| {
        RouterError::MalformedOutput("no JSON object with a \"target\" field".into())
    })?;
    let task: Task = serde_json::from_value(Value::Object(obj))
        .map_err(|e| RouterError::MalformedOutput(e.to_string()))?;
    if task.target.trim().is_empty() {
        return Err(RouterError::MalformedOutput("empty target".into()));
    }
    Ok(task)
}

/// Asks the model to split the instruction into subtasks. Any failure is
/// logged and yields `None`; the episode then runs without guidance.
pub fn decompose<P: Provider + ?Sized>(
    provider: &P,
    prompts: &PromptSet,
    instruction: &Instruction,
    tools: &[ToolSpec],
    max_retries: u32,
) -> Option<Task> {
    let prompt = prompts.decompose.render(&[
        ("instruction", &instruction.text),
        ("tools", &tools_block(tools)),
    ]);
    let mut text = prompt.clone();
    for attempt in 0..=max_retries {
        let reply = match provider.complete(&CompletionRequest::prompt(text.as_str())) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(error = %e, "decomposition skipped: provider error");
                return None;
            }
        };
        match parse_task(&reply) {
            Ok(task) => return Some(task),
            Err(e) => {
                tracing::debug!(attempt, error = %e, "decomposition reply did not parse");
                text = format!(
                    "{prompt}\n\n{CORRECTION_HEADER}\nYour previous reply could not be used: {e}. \
                     Reply again with exactly one JSON object with \"target\" and \"subtasks\"."
                );
            }
        }
    }
    tracing::warn!(instruction = %instruction.id, "decomposition skipped: malformed output");
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::{Recorder, ScriptedPolicy, ScriptedProvider};
    use crate::types::{args, FailureEntry, ParamSpec, ResultEntry};
    use proptest::prelude::*;

    fn tools() -> Vec<ToolSpec> {
        vec![ToolSpec::new("get_weather", "Current weather for a city.")
            .with_param(ParamSpec::required("city", "City name"))]
    }

    fn instr() -> Instruction {
        Instruction::new("q", "What is the weather in Miami?")
    }

    #[test]
    fn empty_state_block() {
        let p = build_router_prompt(&instr(), &State::initial(), &tools(), None, "rules");
        assert!(p.state_block.contains("Current results: (none)."));
        assert!(p.state_block.contains("Failure history: (none)."));
        assert_eq!(p.rules_block, "rules");
        assert_eq!(
            p.tools_block,
            "- get_weather: Current weather for a city. Parameters: city (string, required): City name."
        );
    }

    #[test]
    fn every_failure_is_rendered() {
        let mut state = State::initial();
        state.current_results.push(ResultEntry {
            text: "r".into(),
            step: 1,
        });
        for (i, reason) in ["HTTP 500 from server", "missing parameter city"]
            .iter()
            .enumerate()
        {
            state.failure_history.push(FailureEntry {
                tool_name: format!("tool_{i}"),
                args_digest: format!("d{i}"),
                reason: (*reason).into(),
                step: i as u32 + 2,
            });
        }
        let p = build_router_prompt(&instr(), &state, &tools(), None, "");
        assert!(p.state_block.contains("tool_0(d0): HTTP 500 from server"));
        assert!(p.state_block.contains("tool_1(d1): missing parameter city"));
    }

    #[test]
    fn decomposition_adds_three_lines() {
        let task = Task {
            target: "plan trip".into(),
            subtasks: vec!["weather".into(), "flights".into()],
        };
        let plain = instruction_block(&instr(), None);
        let with = instruction_block(&instr(), Some(&task));
        assert_eq!(with.lines().count(), plain.lines().count() + 3);
        assert!(with.ends_with("Task: plan trip\nSubtask 1: weather\nSubtask 2: flights"));
    }

    #[test]
    fn rendered_prompt_is_deterministic_and_complete() {
        let p = build_router_prompt(&instr(), &State::initial(), &tools(), None, "RULES");
        let t = PromptSet::default().router;
        let a = p.render(&t);
        assert_eq!(a, p.render(&t));
        assert!(a.starts_with("### ROLE: router"));
        for part in [
            "What is the weather in Miami?",
            "Current results: (none).",
            "RULES",
            "- get_weather",
        ] {
            assert!(a.contains(part));
        }
    }

    #[test]
    fn parse_tool_call() {
        let a = parse_action(r#"{"thought":"t","action":"get_weather","args":{"city":"Miami"}}"#)
            .unwrap();
        assert_eq!(
            a,
            Action::tool_call("get_weather", args([("city", "Miami")])).with_thought("t")
        );
    }

    #[test]
    fn parse_finish() {
        let a = parse_action(r#"{"action":"Finish","args":{"Answer":"42"}}"#).unwrap();
        assert!(a.is_finish());
        assert_eq!(a.answer().as_deref(), Some("42"));
    }

    #[test]
    fn parse_errors() {
        for bad in [
            r#"Sure! Here is my plan... {"action":"Finish","args":{}}"#,
            r#"{"action":"get_weather","args":"city=Miami"}"#,
            r#"{"action":"get_weather"}"#,
            r#"{"action":"","args":{}}"#,
            "no json at all",
        ] {
            assert!(
                matches!(parse_action(bad), Err(RouterError::MalformedOutput(_))),
                "{bad}"
            );
        }
    }

    proptest! {
        #[test]
        fn parse_ignores_surrounding_prose(prefix in "[a-zA-Z .,!?:\n]{0,80}", suffix in "[a-zA-Z .,!?:\n]{0,80}") {
            let body = r#"{"thought":"x","action":"get_weather","args":{"city":"Miami"}}"#;
            let a = parse_action(&format!("{prefix}{body}{suffix}")).unwrap();
            prop_assert_eq!(a.name(), "get_weather");
        }

        #[test]
        fn finish_always_carries_answer(answer in ".{0,20}") {
            let text = serde_json::json!({"action": "Finish", "args": {"Answer": answer}}).to_string();
            if let Ok(a) = parse_action(&text) {
                prop_assert!(a.is_finish());
                prop_assert!(!a.answer().unwrap().trim().is_empty());
            }
        }
    }

    #[test]
    fn propose_happy_path() {
        let p = ScriptedProvider::new(ScriptedPolicy::new().on(
            "Miami",
            r#"{"action":"get_weather","args":{"city":"Miami"}}"#,
        ));
        let prop = propose(
            &p,
            &PromptSet::default(),
            &instr(),
            &State::initial(),
            &tools(),
            None,
            2,
        )
        .unwrap();
        assert_eq!(prop.retries, 0);
        assert_eq!(prop.action.name(), "get_weather");
    }

    #[test]
    fn propose_recovers_after_correction() {
        let p = Recorder::new(ScriptedProvider::new(
            ScriptedPolicy::new()
                .on(
                    CORRECTION_HEADER,
                    r#"{"action":"get_weather","args":{"city":"Miami"}}"#,
                )
                .with_default("I think I should check the weather."),
        ));
        let prop = propose(
            &p,
            &PromptSet::default(),
            &instr(),
            &State::initial(),
            &tools(),
            None,
            2,
        )
        .unwrap();
        assert_eq!(prop.retries, 1);
        let prompts = p.prompts();
        assert_eq!(prompts.len(), 2);
        assert!(prompts[1].contains("could not be used: no JSON object"));
    }

    #[test]
    fn propose_gives_up_after_three_attempts() {
        let p = Recorder::new(ScriptedProvider::new(
            ScriptedPolicy::new().with_default("garbage"),
        ));
        let err = propose(
            &p,
            &PromptSet::default(),
            &instr(),
            &State::initial(),
            &tools(),
            None,
            2,
        )
        .unwrap_err();
        assert!(matches!(err, RouterError::MalformedOutput(_)));
        assert_eq!(p.prompts().len(), 3);
    }

    #[test]
    fn propose_propagates_provider_errors() {
        let p = ScriptedProvider::new(ScriptedPolicy::new());
        let err = propose(
            &p,
            &PromptSet::default(),
            &instr(),
            &State::initial(),
            &tools(),
            None,
            2,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            RouterError::Provider(ProviderError::Script(_))
        ));
    }

    #[test]
    fn decompose_parses_task() {
        let p = ScriptedProvider::new(ScriptedPolicy::new().on(
            "task_decomposer",
            r#"{"target":"plan trip","subtasks":["weather","flights"]}"#,
        ));
        let task = decompose(&p, &PromptSet::default(), &instr(), &tools(), 2).unwrap();
        assert_eq!(task.subtasks.len(), 2);

        let empty = ScriptedProvider::new(
            ScriptedPolicy::new().on("task_decomposer", r#"{"target":"plan trip","subtasks":[]}"#),
        );
        assert_eq!(
            decompose(&empty, &PromptSet::default(), &instr(), &tools(), 2)
                .unwrap()
                .subtasks
                .len(),
            0
        );
    }

    #[test]
    fn decompose_falls_back_to_none() {
        let p = Recorder::new(ScriptedProvider::new(
            ScriptedPolicy::new().with_default("no idea"),
        ));
        assert!(decompose(&p, &PromptSet::default(), &instr(), &tools(), 2).is_none());
        assert_eq!(p.prompts().len(), 3);
    }
}

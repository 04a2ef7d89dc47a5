//! Summarization stage: judge each observation, fold it into a new [`State`],
//! and keep the rendered state under its character cap.
//!
//! The model decides success or failure (a call can succeed at the transport
//! level and still be useless for the task). If it cannot produce a usable
//! verdict, a mechanical fallback based on the transport status is used, so
//! an update never aborts the episode.

use serde_json::Value;

use crate::json::first_object_with_key;
use crate::prompts::PromptSet;
use crate::provider::{CompletionRequest, Provider};
use crate::router::CORRECTION_HEADER;
use crate::types::{
    args_digest, render_args, truncate_chars, FailureEntry, Instruction, Observation, ResultEntry,
    State,
};

pub const DEFAULT_STATE_CAP_CHARS: usize = 4096;
pub const DEFAULT_OBSERVATION_WINDOW_CHARS: usize = 4096;
pub const MIN_CAP_CHARS: usize = 512;
/// Failure reasons are cut to this length once the state overflows.
pub const REASON_LIMIT_CHARS: usize = 120;
/// Length of the payload prefix kept by the mechanical success fallback.
pub const FALLBACK_RESULT_CHARS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateManagerConfig {
    pub state_cap_chars: usize,
    pub observation_window_chars: usize,
    pub parse_retries: u32,
}

impl Default for StateManagerConfig {
    fn default() -> Self {
        Self {
            state_cap_chars: DEFAULT_STATE_CAP_CHARS,
            observation_window_chars: DEFAULT_OBSERVATION_WINDOW_CHARS,
            parse_retries: crate::router::DEFAULT_PARSE_RETRIES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureRecord {
    pub tool_name: String,
    pub args_digest: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateUpdate {
    pub verdict: Verdict,
    pub result_entry: Option<String>,
    pub failure_entry: Option<FailureRecord>,
}

impl StateUpdate {
    pub fn success(summary: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Success,
            result_entry: Some(summary.into()),
            failure_entry: None,
        }
    }

    pub fn failure(observation: &Observation, reason: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Failure,
            result_entry: None,
            failure_entry: Some(FailureRecord {
                tool_name: observation.tool_name.clone(),
                args_digest: args_digest(&observation.args_echo),
                reason: reason.into(),
            }),
        }
    }

    /// Transport-status verdict used when the model gives nothing usable.
    pub fn mechanical(observation: &Observation) -> Self {
        match observation.error_descriptor() {
            Some(descriptor) if !observation.is_success() => Self::failure(observation, descriptor),
            _ => {
                let head = truncate_chars(observation.payload.trim(), FALLBACK_RESULT_CHARS);
                if head.is_empty() {
                    Self::success(format!(
                        "{} returned an empty response",
                        observation.tool_name
                    ))
                } else {
                    Self::success(head)
                }
            }
        }
    }
}

/// Cuts `payload` to `window` chars, appending `[truncated N chars]`.
pub fn truncate_observation(payload: &str, window: usize) -> String {
    let total = payload.chars().count();
    if total <= window {
        return payload.to_owned();
    }
    format!(
        "{}\n[truncated {} chars]",
        truncate_chars(payload, window),
        total - window
    )
}

fn observation_block(observation: &Observation, window: usize) -> String {
    let mut out = format!(
        "Tool: {}({})\nStatus: {}",
        observation.tool_name,
        render_args(&observation.args_echo),
        observation.status
    );
    if let Some(descriptor) = observation.error_descriptor() {
        out.push_str("\nError: ");
        out.push_str(&descriptor);
    }
    if observation.payload.is_empty() {
        out.push_str("\nPayload: (empty)");
    } else {
        out.push_str("\nPayload:\n");
        out.push_str(&truncate_observation(&observation.payload, window));
    }
    out
}

pub fn build_state_prompt(
    prompts: &PromptSet,
    instruction: &Instruction,
    state: &State,
    observation: &Observation,
    observation_window_chars: usize,
) -> String {
    prompts.state_manager.render(&[
        ("instruction", &instruction.text),
        ("state", &state.render()),
        (
            "observation",
            &observation_block(observation, observation_window_chars),
        ),
    ])
}

/// Parses a `{"verdict": ..., "summary"|"reason": ...}` reply.
pub fn parse_state_reply(output: &str, observation: &Observation) -> Result<StateUpdate, String> {
    let obj = first_object_with_key(output, "verdict")
        .ok_or_else(|| "no JSON object with a \"verdict\" field".to_owned())?;
    let field = |key: &str| {
        obj.get(key)
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_owned)
    };
    match obj["verdict"]
        .as_str()
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("success") => field("summary")
            .map(StateUpdate::success)
            .ok_or_else(|| "success verdict needs a non-empty \"summary\"".to_owned()),
        Some("failure") => field("reason")
            .map(|r| StateUpdate::failure(observation, r))
            .ok_or_else(|| "failure verdict needs a non-empty \"reason\"".to_owned()),
        _ => Err("\"verdict\" must be \"success\" or \"failure\"".to_owned()),
    }
}

/// Asks the model for a verdict, with corrective re-asks, falling back to
/// [`StateUpdate::mechanical`]. The flag is true when the fallback was used.
pub fn judge_observation<P: Provider + ?Sized>(
    provider: &P,
    prompts: &PromptSet,
    instruction: &Instruction,
    state: &State,
    observation: &Observation,
    config: &StateManagerConfig,
) -> (StateUpdate, bool) {
    let prompt = build_state_prompt(
        prompts,
        instruction,
        state,
        observation,
        config.observation_window_chars,
    );
    let mut text = prompt.clone();
    for attempt in 0..=config.parse_retries {
        let reply = match provider.complete(&CompletionRequest::prompt(text.as_str())) {
            Ok(r) => r,
            Err(e) => {
                tracing::warn!(error = %e, "state manager using fallback: provider error");
                return (StateUpdate::mechanical(observation), true);
            }
        };
        match parse_state_reply(&reply, observation) {
            Ok(update) => return (update, false),
            Err(e) => {
                tracing::debug!(attempt, error = %e, "state manager reply did not parse");
                text = format!(
                    "{prompt}\n\n{CORRECTION_HEADER}\nYour previous reply could not be used: {e}. \
                     Reply again with exactly one JSON object with \"verdict\" and either \"summary\" or \"reason\"."
                );
            }
        }
    }
    tracing::warn!(tool = %observation.tool_name, "state manager using fallback: malformed output");
    (StateUpdate::mechanical(observation), true)
}

/// Folds `update` into a copy of `state`. Identical (tool, args) failures
/// are recorded once.
pub fn apply_update(state: &State, update: &StateUpdate, step: u32) -> State {
    let mut next = state.clone();
    match update.verdict {
        Verdict::Success => {
            if let Some(text) = &update.result_entry {
                next.current_results.push(ResultEntry {
                    text: text.clone(),
                    step,
                });
            }
        }
        Verdict::Failure => {
            if let Some(f) = &update.failure_entry {
                if !next.has_failure(&f.tool_name, &f.args_digest) {
                    next.failure_history.push(FailureEntry {
                        tool_name: f.tool_name.clone(),
                        args_digest: f.args_digest.clone(),
                        reason: f.reason.clone(),
                        step,
                    });
                }
            }
        }
    }
    next
}

/// Summarization stage for one observation. Returns a new state; the input
/// is untouched.
pub fn update<P: Provider + ?Sized>(
    provider: &P,
    prompts: &PromptSet,
    instruction: &Instruction,
    state: &State,
    observation: &Observation,
    step: u32,
    config: &StateManagerConfig,
) -> State {
    let (update, _) = judge_observation(provider, prompts, instruction, state, observation, config);
    apply_update(state, &update, step)
}

fn shorten(text: &str, limit: usize) -> String {
    if text.chars().count() <= limit {
        return text.to_owned();
    }
    format!("{}...", truncate_chars(text, limit.saturating_sub(3)))
}

fn shorten_reasons(state: &mut State, limit: usize) {
    for f in &mut state.failure_history {
        f.reason = shorten(&f.reason, limit);
    }
}

fn mechanical_merge(a: &str, b: &str) -> String {
    let half = a.chars().count().max(b.chars().count()) / 2;
    format!("{} | {}", truncate_chars(a, half), truncate_chars(b, half))
}

fn merge_results<P: Provider + ?Sized>(
    provider: &P,
    prompts: &PromptSet,
    instruction: &Instruction,
    a: &ResultEntry,
    b: &ResultEntry,
) -> String {
    let entries = format!(
        "1. [step {}] {}\n2. [step {}] {}",
        a.step, a.text, b.step, b.text
    );
    let prompt = prompts
        .compress
        .render(&[("instruction", &instruction.text), ("entries", &entries)]);
    let combined = a.text.chars().count() + b.text.chars().count();
    let merged = provider
        .complete(&CompletionRequest::prompt(prompt))
        .ok()
        .and_then(|reply| first_object_with_key(&reply, "summary"))
        .and_then(|obj| obj["summary"].as_str().map(|s| s.trim().to_owned()))
        .filter(|s| !s.is_empty() && s.chars().count() < combined);
    merged.unwrap_or_else(|| mechanical_merge(&a.text, &b.text))
}

/// Brings the rendered state within `cap_chars`.
///
/// Order of measures: cut failure reasons to [`REASON_LIMIT_CHARS`]; merge
/// the two oldest results (model summary, mechanical fallback) until one
/// result is left; cut reasons further; finally hard-truncate the single
/// remaining result. Failure entries are never dropped, so a failure
/// history that alone exceeds the cap leaves the state over it.
pub fn enforce_cap<P: Provider + ?Sized>(
    provider: &P,
    prompts: &PromptSet,
    instruction: &Instruction,
    state: &State,
    cap_chars: usize,
) -> State {
    let mut s = state.clone();
    if s.rendered_len() <= cap_chars {
        return s;
    }
    shorten_reasons(&mut s, REASON_LIMIT_CHARS);
    while s.rendered_len() > cap_chars && s.current_results.len() > 1 {
        let b = s.current_results.remove(1);
        let a = &s.current_results[0];
        let text = merge_results(provider, prompts, instruction, a, &b);
        s.current_results[0] = ResultEntry { text, step: b.step };
    }
    for limit in [60, 24] {
        if s.rendered_len() > cap_chars {
            shorten_reasons(&mut s, limit);
        }
    }
    let len = s.rendered_len();
    if len > cap_chars {
        if let Some(entry) = s.current_results.first_mut() {
            let current = entry.text.chars().count();
            let keep = current.saturating_sub(len - cap_chars + 3);
            entry.text = if keep == 0 {
                String::new()
            } else {
                format!("{}...", truncate_chars(&entry.text, keep))
            };
        }
    }
    s
}

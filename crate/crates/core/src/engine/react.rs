use std::collections::VecDeque;
use std::fmt::Write as _;

use super::{start_episode, EngineConfig, Method};
use crate::episode::{Episode, EpisodeError, Step, Terminal};
use crate::prompts::{PromptSet, Template};
use crate::provider::Provider;
use crate::router::{decompose, instruction_block, propose_from_prompt, tools_block, Task};
use crate::sandbox::ToolExecutor;
use crate::state_manager::truncate_observation;
use crate::types::{truncate_chars, Action, Instruction, Observation, State, ToolSpec};

pub(super) const EMPTY_HISTORY: &str = "(no actions yet)";
const ENTRY_SEPARATOR: &str = "\n\n";

/// One thought/action/observation record of a raw transcript.
pub fn transcript_entry(action: &Action, observation: &Observation, window: usize) -> String {
    let mut out = String::new();
    if let Some(thought) = action.thought.as_deref().filter(|t| !t.trim().is_empty()) {
        let _ = writeln!(out, "Thought: {}", thought.trim());
    }
    let _ = writeln!(out, "Action: {action}");
    let body = match observation.error_descriptor() {
        Some(descriptor) if !observation.is_success() => descriptor,
        _ => observation.payload.clone(),
    };
    let _ = write!(out, "Observation: {}", truncate_observation(&body, window));
    out
}

/// Joins `entries`, dropping the oldest whole entries until the result fits
/// `window`. A lone entry longer than the window is cut to it.
pub fn render_transcript(entries: &VecDeque<String>, window: usize) -> String {
    if entries.is_empty() {
        return EMPTY_HISTORY.to_owned();
    }
    let sep = ENTRY_SEPARATOR.len();
    let mut total: usize =
        entries.iter().map(|e| e.chars().count()).sum::<usize>() + sep * (entries.len() - 1);
    let mut first = 0;
    while total > window && entries.len() - first > 1 {
        total -= entries[first].chars().count() + sep;
        first += 1;
    }
    let kept: Vec<&str> = entries.iter().skip(first).map(String::as_str).collect();
    let joined = kept.join(ENTRY_SEPARATOR);
    truncate_chars(&joined, window).to_owned()
}

pub(super) fn transcript_prompt(
    template: &Template,
    rules: &str,
    instruction: &Instruction,
    decomposition: Option<&Task>,
    tools: &[ToolSpec],
    transcript: &str,
    position: &str,
) -> String {
    template.render(&[
        (
            "instruction",
            &instruction_block(instruction, decomposition),
        ),
        ("transcript", transcript),
        ("position", position),
        ("rules", rules),
        ("tools", &tools_block(tools)),
    ])
}

/// Linear baseline: the prompt carries the raw append-only transcript,
/// truncated to the memory window. The state stays at its initial value.
pub fn run_react<P, E>(
    provider: &P,
    prompts: &PromptSet,
    instruction: &Instruction,
    tools: &[ToolSpec],
    config: &EngineConfig,
    executor: &mut E,
) -> Result<Episode, EpisodeError>
where
    P: Provider + ?Sized,
    E: ToolExecutor + ?Sized,
{
    let mut episode = start_episode(Method::React, instruction, tools, config)?;
    let decomposition = if config.use_decomposition {
        decompose(provider, prompts, instruction, tools, config.parse_retries)
    } else {
        None
    };
    let mut entries: VecDeque<String> = VecDeque::new();
    for step in 1..=config.step_budget {
        let transcript = render_transcript(&entries, config.react_memory_window_chars);
        let prompt = transcript_prompt(
            &prompts.react,
            &prompts.react_rules,
            instruction,
            decomposition.as_ref(),
            tools,
            &transcript,
            "",
        );
        let proposal = match propose_from_prompt(provider, &prompt, config.parse_retries) {
            Ok(p) => p,
            Err(e) => {
                tracing::warn!(step, error = %e, "proposal failed");
                episode.finish(Terminal::AbortedParseFailure {
                    reason: e.to_string(),
                });
                return Ok(episode);
            }
        };
        let action = proposal.action;
        if let Some(answer) = action.answer() {
            let mut record = Step::new(action, None, State::initial());
            record.parse_retries = proposal.retries;
            episode.push_step(record);
            episode.finish(Terminal::Finished { answer });
            return Ok(episode);
        }
        let observation = executor.invoke(action.name(), &action.args);
        entries.push_back(transcript_entry(
            &action,
            &observation,
            config.observation_window_chars,
        ));
        let mut record = Step::new(action, Some(observation), State::initial());
        record.parse_retries = proposal.retries;
        episode.push_step(record);
    }
    episode.finish(Terminal::BudgetExhausted);
    Ok(episode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_oldest_whole_entries() {
        let entries: VecDeque<String> = ["a".repeat(100), "b".repeat(100), "c".repeat(100)]
            .into_iter()
            .collect();
        assert_eq!(render_transcript(&entries, 1000).len(), 304);
        let r = render_transcript(&entries, 250);
        assert_eq!(r, format!("{}\n\n{}", "b".repeat(100), "c".repeat(100)));
        let r = render_transcript(&entries, 201);
        assert_eq!(r, "c".repeat(100));
        assert_eq!(render_transcript(&entries, 50), "c".repeat(50));
        assert_eq!(render_transcript(&VecDeque::new(), 50), EMPTY_HISTORY);
    }
}

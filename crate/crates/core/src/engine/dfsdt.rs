use super::react::{transcript_entry, transcript_prompt, EMPTY_HISTORY};
use super::{start_episode, EngineConfig, Method};
use crate::episode::{Episode, EpisodeError, SearchPosition, Step, Terminal};
use crate::prompts::PromptSet;
use crate::provider::Provider;
use crate::router::{decompose, propose_from_prompt};
use crate::sandbox::ToolExecutor;
use crate::types::{Instruction, State, ToolSpec, RESTART};

#[derive(Debug, Clone)]
struct SearchNode {
    /// Transcript entries along the path from the root.
    memory: Vec<String>,
    children_tried: u32,
    parent: Option<usize>,
    depth: u32,
}

fn position_line(depth: u32, branch: u32, max_children: u32) -> String {
    format!("Depth {depth}, branch {branch} of {max_children}")
}

/// Depth-first baseline. A failed tool call or a `Restart` action discards
/// that child and the next proposal is made from the same node as a
/// sibling; a node whose children are used up hands control back to its
/// parent. Only successful calls extend the transcript.
pub fn run_dfsdt<P, E>(
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
    let mut episode = start_episode(Method::Dfsdt, instruction, tools, config)?;
    let decomposition = if config.use_decomposition {
        decompose(provider, prompts, instruction, tools, config.parse_retries)
    } else {
        None
    };
    let max_children = config.dfsdt_max_children;
    let mut nodes = vec![SearchNode {
        memory: Vec::new(),
        children_tried: 0,
        parent: None,
        depth: 0,
    }];
    let mut current = 0usize;
    let mut steps = 0u32;
    while steps < config.step_budget {
        if nodes[current].children_tried >= max_children {
            match nodes[current].parent {
                Some(parent) => {
                    tracing::debug!(from = current, to = parent, "backtrack");
                    current = parent;
                    continue;
                }
                None => break,
            }
        }
        nodes[current].children_tried += 1;
        let node = &nodes[current];
        let position = SearchPosition {
            depth: node.depth,
            branch: node.children_tried,
        };
        let transcript = if node.memory.is_empty() {
            EMPTY_HISTORY.to_owned()
        } else {
            node.memory.join("\n\n")
        };
        let prompt = transcript_prompt(
            &prompts.dfsdt,
            &prompts.dfsdt_rules,
            instruction,
            decomposition.as_ref(),
            tools,
            &transcript,
            &position_line(position.depth, position.branch, max_children),
        );
        steps += 1;
        let proposal = match propose_from_prompt(provider, &prompt, config.parse_retries) {
            Ok(p) => p,
            Err(e) => {
                tracing::warn!(step = steps, error = %e, "proposal failed");
                episode.finish(Terminal::AbortedParseFailure {
                    reason: e.to_string(),
                });
                return Ok(episode);
            }
        };
        let action = proposal.action;
        let record = |observation| {
            let mut s = Step::new(action.clone(), observation, State::initial());
            s.parse_retries = proposal.retries;
            s.search = Some(position);
            s
        };
        if let Some(answer) = action.answer() {
            episode.push_step(record(None));
            episode.finish(Terminal::Finished { answer });
            return Ok(episode);
        }
        if action.name() == RESTART {
            episode.push_step(record(None));
            continue;
        }
        let observation = executor.invoke(action.name(), &action.args);
        let entry = transcript_entry(&action, &observation, config.observation_window_chars);
        let succeeded = observation.is_success();
        episode.push_step(record(Some(observation)));
        if succeeded {
            let mut memory = nodes[current].memory.clone();
            memory.push(entry);
            let depth = nodes[current].depth + 1;
            nodes.push(SearchNode {
                memory,
                children_tried: 0,
                parent: Some(current),
                depth,
            });
            current = nodes.len() - 1;
        }
    }
    episode.finish(Terminal::BudgetExhausted);
    Ok(episode)
}

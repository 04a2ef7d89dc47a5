use super::{start_episode, EngineConfig, Method};
use crate::episode::{Episode, EpisodeError, Step, Terminal};
use crate::prompts::PromptSet;
use crate::provider::Provider;
use crate::router::{decompose, propose};
use crate::sandbox::ToolExecutor;
use crate::state_manager::{enforce_cap, update};
use crate::types::{Instruction, State, ToolSpec};

/// Router proposes from the current state; each tool result is folded into
/// the next state by the state manager and capped.
pub fn run_sum2act<P, E>(
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
    let mut episode = start_episode(Method::Sum2Act, instruction, tools, config)?;
    let decomposition = if config.use_decomposition {
        decompose(provider, prompts, instruction, tools, config.parse_retries)
    } else {
        None
    };
    let sm_config = config.state_manager();
    let mut state = State::initial();
    for step in 1..=config.step_budget {
        let proposal = match propose(
            provider,
            prompts,
            instruction,
            &state,
            tools,
            decomposition.as_ref(),
            config.parse_retries,
        ) {
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
            let mut record = Step::new(action, None, state);
            record.parse_retries = proposal.retries;
            episode.push_step(record);
            episode.finish(Terminal::Finished { answer });
            return Ok(episode);
        }
        let observation = executor.invoke(action.name(), &action.args);
        tracing::debug!(step, action = %action, status = %observation.status, "executed");
        let next = update(
            provider,
            prompts,
            instruction,
            &state,
            &observation,
            step,
            &sm_config,
        );
        let next = enforce_cap(
            provider,
            prompts,
            instruction,
            &next,
            config.state_cap_chars,
        );
        let mut record = Step::new(action, Some(observation), next.clone());
        record.parse_retries = proposal.retries;
        episode.push_step(record);
        state = next;
    }
    episode.finish(Terminal::BudgetExhausted);
    Ok(episode)
}

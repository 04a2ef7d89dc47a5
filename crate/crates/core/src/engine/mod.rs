//! Outer loops: the summarizing router/state-manager loop and the two
//! transcript-based baselines.

mod dfsdt;
mod react;
mod sum2act;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::episode::{Episode, EpisodeError};
use crate::prompts::PromptSet;
use crate::provider::Provider;
use crate::router::DEFAULT_PARSE_RETRIES;
use crate::sandbox::ToolExecutor;
use crate::state_manager::{
    StateManagerConfig, DEFAULT_OBSERVATION_WINDOW_CHARS, DEFAULT_STATE_CAP_CHARS, MIN_CAP_CHARS,
};
use crate::types::{Instruction, ToolSpec};

pub use dfsdt::run_dfsdt;
pub use react::{render_transcript, run_react, transcript_entry};
pub use sum2act::run_sum2act;

pub const DEFAULT_SUM2ACT_BUDGET: u32 = 30;
pub const DEFAULT_REACT_BUDGET: u32 = 30;
pub const DEFAULT_DFSDT_BUDGET: u32 = 200;
pub const DEFAULT_REACT_MEMORY_WINDOW_CHARS: usize = 4096;
pub const DEFAULT_DFSDT_MAX_CHILDREN: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sum2Act,
    React,
    Dfsdt,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sum2Act, Method::React, Method::Dfsdt];

    pub fn label(self) -> &'static str {
        match self {
            Method::Sum2Act => "sum2act",
            Method::React => "react",
            Method::Dfsdt => "dfsdt",
        }
    }

    pub fn default_budget(self) -> u32 {
        match self {
            Method::Sum2Act => DEFAULT_SUM2ACT_BUDGET,
            Method::React => DEFAULT_REACT_BUDGET,
            Method::Dfsdt => DEFAULT_DFSDT_BUDGET,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown method {s:?} (expected sum2act, react or dfsdt)"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Maximum number of proposal calls.
    pub step_budget: u32,
    pub state_cap_chars: usize,
    /// Raw observations are cut to this many chars before any model sees them.
    pub observation_window_chars: usize,
    pub use_decomposition: bool,
    pub react_memory_window_chars: usize,
    pub dfsdt_max_children: u32,
    pub parse_retries: u32,
}

impl EngineConfig {
    pub fn for_method(method: Method) -> Self {
        Self {
            step_budget: method.default_budget(),
            state_cap_chars: DEFAULT_STATE_CAP_CHARS,
            observation_window_chars: DEFAULT_OBSERVATION_WINDOW_CHARS,
            use_decomposition: false,
            react_memory_window_chars: DEFAULT_REACT_MEMORY_WINDOW_CHARS,
            dfsdt_max_children: DEFAULT_DFSDT_MAX_CHILDREN,
            parse_retries: DEFAULT_PARSE_RETRIES,
        }
    }

    pub fn with_budget(mut self, budget: u32) -> Self {
        self.step_budget = budget;
        self
    }

    pub fn validate(&self) -> Result<(), EpisodeError> {
        let bad = |m: String| Err(EpisodeError::Config(m));
        if self.step_budget == 0 {
            return bad("step_budget must be at least 1".into());
        }
        for (name, value) in [
            ("state_cap_chars", self.state_cap_chars),
            ("observation_window_chars", self.observation_window_chars),
            ("react_memory_window_chars", self.react_memory_window_chars),
        ] {
            if value < MIN_CAP_CHARS {
                return bad(format!(
                    "{name} must be at least {MIN_CAP_CHARS}, got {value}"
                ));
            }
        }
        if self.dfsdt_max_children == 0 {
            return bad("dfsdt_max_children must be at least 1".into());
        }
        Ok(())
    }

    pub fn state_manager(&self) -> StateManagerConfig {
        StateManagerConfig {
            state_cap_chars: self.state_cap_chars,
            observation_window_chars: self.observation_window_chars,
            parse_retries: self.parse_retries,
        }
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self::for_method(Method::Sum2Act)
    }
}

/// Runs one episode with the chosen method. Only configuration problems
/// are returned as errors; every runtime failure ends up in the episode's
/// terminal status.
pub fn run_episode<P, E>(
    method: Method,
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
    let span =
        tracing::info_span!("episode", method = method.label(), instruction = %instruction.id);
    let _guard = span.enter();
    let episode = match method {
        Method::Sum2Act => run_sum2act(provider, prompts, instruction, tools, config, executor),
        Method::React => run_react(provider, prompts, instruction, tools, config, executor),
        Method::Dfsdt => run_dfsdt(provider, prompts, instruction, tools, config, executor),
    }?;
    tracing::info!(steps = episode.steps.len(), terminal = ?episode.terminal, "episode done");
    Ok(episode)
}

fn start_episode(
    method: Method,
    instruction: &Instruction,
    tools: &[ToolSpec],
    config: &EngineConfig,
) -> Result<Episode, EpisodeError> {
    config.validate()?;
    Episode::new(
        instruction.clone(),
        tools.to_vec(),
        config.step_budget,
        method.label(),
    )
}

#[cfg(test)]
mod tests;

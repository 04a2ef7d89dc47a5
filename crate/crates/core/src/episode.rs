//! Episode traces: construction, validation and the line-delimited trace format.
//!
//! A trace file holds one JSON object per line. Each record has the fields
//! `instruction`, `tools`, `steps`, `terminal`, `method_label` and
//! `step_budget`; these names are part of the stable file contract.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Action, Instruction, Observation, State, ToolSpec, ValidationError};

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("episode has no terminal status")]
    NotTerminal,
    #[error("invalid episode: {0}")]
    Invalid(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("malformed trace record: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{path}:{line}: {source}")]
    TraceLine {
        path: String,
        line: usize,
        #[source]
        source: Box<EpisodeError>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How an episode ended.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum Terminal {
    Finished {
        answer: String,
    },
    BudgetExhausted,
    /// The router never produced a usable action (or the provider failed).
    AbortedParseFailure {
        reason: String,
    },
}

impl Terminal {
    pub fn label(&self) -> &'static str {
        match self {
            Terminal::Finished { .. } => "Finished",
            Terminal::BudgetExhausted => "BudgetExhausted",
            Terminal::AbortedParseFailure { .. } => "AbortedParseFailure",
        }
    }

    pub fn answer(&self) -> Option<&str> {
        match self {
            Terminal::Finished { answer } => Some(answer),
            _ => None,
        }
    }
}

/// Location of a step inside the depth-first search tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchPosition {
    /// Depth of the node the action was proposed from (root = 0).
    pub depth: u32,
    /// 1-based index of this child among its siblings.
    pub branch: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<Observation>,
    /// State after this step was summarized.
    pub state: State,
    /// Corrective re-asks needed before the action parsed.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub parse_retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<SearchPosition>,
}

fn is_zero(n: &u32) -> bool {
    *n == 0
}

impl Step {
    pub fn new(action: Action, observation: Option<Observation>, state: State) -> Self {
        Self {
            action,
            observation,
            state,
            parse_retries: 0,
            search: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub instruction: Instruction,
    pub tools: Vec<ToolSpec>,
    pub steps: Vec<Step>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal: Option<Terminal>,
    pub method_label: String,
    pub step_budget: u32,
}

impl Episode {
    /// Starts an empty episode. The implicit state before the first step is S0.
    pub fn new(
        instruction: Instruction,
        tools: Vec<ToolSpec>,
        step_budget: u32,
        method_label: impl Into<String>,
    ) -> Result<Self, EpisodeError> {
        if step_budget == 0 {
            return Err(EpisodeError::Config(
                "step budget must be at least 1".into(),
            ));
        }
        if tools.is_empty() {
            return Err(EpisodeError::Config("tool list is empty".into()));
        }
        instruction.validate()?;
        Ok(Self {
            instruction,
            tools,
            steps: Vec::new(),
            terminal: None,
            method_label: method_label.into(),
            step_budget,
        })
    }

    /// State after the latest step, or the initial state.
    pub fn current_state(&self) -> State {
        self.steps
            .last()
            .map(|s| s.state.clone())
            .unwrap_or_default()
    }

    pub fn steps_remaining(&self) -> u32 {
        self.step_budget.saturating_sub(self.steps.len() as u32)
    }

    pub fn push_step(&mut self, step: Step) {
        debug_assert!(self.terminal.is_none());
        self.steps.push(step);
    }

    pub fn finish(&mut self, terminal: Terminal) {
        self.terminal = Some(terminal);
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.terminal, Some(Terminal::Finished { .. }))
    }

    pub fn answer(&self) -> Option<&str> {
        self.terminal.as_ref().and_then(Terminal::answer)
    }

    /// Distinct tool names called, in first-use order.
    pub fn tools_used(&self) -> Vec<&str> {
        let mut used: Vec<&str> = Vec::new();
        for step in &self.steps {
            if !step.action.is_finish() && !used.contains(&step.action.name()) {
                used.push(step.action.name());
            }
        }
        used
    }

    /// Checks every structural invariant of a complete episode.
    pub fn validate(&self) -> Result<(), EpisodeError> {
        let terminal = self.terminal.as_ref().ok_or(EpisodeError::NotTerminal)?;
        if self.step_budget == 0 {
            return Err(EpisodeError::Invalid("step budget is zero".into()));
        }
        if self.tools.is_empty() {
            return Err(EpisodeError::Invalid("tool list is empty".into()));
        }
        self.instruction.validate()?;
        if self.steps.len() > self.step_budget as usize {
            return Err(EpisodeError::Invalid(format!(
                "{} steps exceed budget {}",
                self.steps.len(),
                self.step_budget
            )));
        }
        let mut failures = 0;
        for (i, step) in self.steps.iter().enumerate() {
            step.action.validate()?;
            if step.action.is_finish() && i + 1 != self.steps.len() {
                return Err(EpisodeError::Invalid(format!(
                    "Finish at step {} is not the last step",
                    i + 1
                )));
            }
            if let Some(obs) = &step.observation {
                obs.validate()?;
            }
            step.state.validate()?;
            if step.state.failure_history.len() < failures {
                return Err(EpisodeError::Invalid(format!(
                    "failure history shrank at step {}",
                    i + 1
                )));
            }
            failures = step.state.failure_history.len();
        }
        let last_is_finish = self.steps.last().is_some_and(|s| s.action.is_finish());
        match terminal {
            Terminal::Finished { answer } => {
                if !last_is_finish {
                    return Err(EpisodeError::Invalid(
                        "Finished episode does not end with a Finish action".into(),
                    ));
                }
                let last = self.steps.last().and_then(|s| s.action.answer());
                if last.as_deref() != Some(answer.as_str()) {
                    return Err(EpisodeError::Invalid(
                        "terminal answer differs from the Finish action".into(),
                    ));
                }
            }
            _ if last_is_finish => {
                return Err(EpisodeError::Invalid(format!(
                    "{} episode ends with a Finish action",
                    terminal.label()
                )));
            }
            _ => {}
        }
        Ok(())
    }
}

/// One-line JSON record for a terminal episode.
pub fn serialize_episode(episode: &Episode) -> Result<String, EpisodeError> {
    if episode.terminal.is_none() {
        return Err(EpisodeError::NotTerminal);
    }
    Ok(serde_json::to_string(episode)?)
}

/// Parses and validates one trace record.
pub fn deserialize_episode(record: &str) -> Result<Episode, EpisodeError> {
    let episode: Episode = serde_json::from_str(record)?;
    episode.validate()?;
    Ok(episode)
}

/// Appends episodes to a trace file, one record per line.
pub fn append_trace(path: &Path, episodes: &[Episode]) -> Result<(), EpisodeError> {
    let mut buf = String::new();
    for episode in episodes {
        buf.push_str(&serialize_episode(episode)?);
        buf.push('\n');
    }
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    file.write_all(buf.as_bytes())?;
    Ok(())
}

/// Reads every record of a trace file. Blank lines are skipped.
pub fn read_trace(path: &Path) -> Result<Vec<Episode>, EpisodeError> {
    let reader = BufReader::new(File::open(path)?);
    let mut episodes = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let episode = deserialize_episode(&line).map_err(|e| EpisodeError::TraceLine {
            path: path.display().to_string(),
            line: i + 1,
            source: Box::new(e),
        })?;
        episodes.push(episode);
    }
    Ok(episodes)
}

//! Tool-invocation orchestration for LLM agents.
//!
//! The main loop alternates a router, which proposes the next tool call from
//! a compact task state, and a state manager, which judges each observation
//! and folds it into that state (results plus a failure history). ReAct and
//! DFSDT baselines, a deterministic API sandbox and pass/win-rate evaluation
//! are included for comparison.

pub mod batch;
pub mod engine;
pub mod episode;
pub mod eval;
pub mod json;
pub mod prompts;
pub mod provider;
pub mod retriever;
pub mod router;
pub mod sandbox;
pub mod state_manager;
pub mod testkit;
pub mod types;

pub use engine::{run_episode, EngineConfig, Method};
pub use episode::{Episode, EpisodeError, Step, Terminal};
pub use eval::{Percentage, Report};
pub use prompts::PromptSet;
pub use provider::{Provider, ScriptedPolicy, ScriptedProvider};
pub use sandbox::{Scenario, ToolExecutor};
pub use types::{Action, Instruction, Observation, ObservationStatus, State, ToolSpec};

//! Settings resolution: command-line flags over config file over defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use sum2act::engine::{EngineConfig, Method};
use sum2act::PromptSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Scripted,
    Live,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    Rule,
    Llm,
}

/// Keys of the TOML config file. Each mirrors a command-line flag.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub method: Option<MethodList>,
    pub provider: Option<ProviderMode>,
    pub policy: Option<PathBuf>,
    pub budget: Option<u32>,
    pub state_cap: Option<usize>,
    pub observation_window: Option<usize>,
    pub react_window: Option<usize>,
    pub dfsdt_max_children: Option<u32>,
    pub decompose: Option<bool>,
    pub concurrency: Option<usize>,
    pub out: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub scenario_dir: Option<PathBuf>,
    pub tools: Option<PathBuf>,
    pub endpoints: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub judge: Option<JudgeMode>,
}

/// `method = "react"` or `method = ["sum2act", "react"]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum MethodList {
    One(String),
    Many(Vec<String>),
}

impl MethodList {
    pub fn parse(&self) -> Result<Vec<Method>> {
        let items: Vec<&str> = match self {
            MethodList::One(s) => s.split(',').collect(),
            MethodList::Many(v) => v.iter().map(String::as_str).collect(),
        };
        parse_methods(&items)
    }
}

pub fn parse_methods(items: &[&str]) -> Result<Vec<Method>> {
    let mut out = Vec::new();
    for item in items.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        let m: Method = item.parse().map_err(anyhow::Error::msg)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        bail!("no method given");
    }
    Ok(out)
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for slot in [
            &mut cfg.policy,
            &mut cfg.out,
            &mut cfg.scenario,
            &mut cfg.scenario_dir,
            &mut cfg.tools,
            &mut cfg.endpoints,
            &mut cfg.templates,
        ] {
            if let Some(p) = slot.as_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }
}

/// Engine-related flags shared by `run` and `bench`.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct EngineFlags {
    /// Scripted replies (policy file) or a live chat-completions endpoint.
    #[arg(long, value_enum)]
    pub provider: Option<ProviderMode>,
    /// Policy file for the scripted provider; defaults to the scenario's own.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Maximum proposal steps per episode (default: 30, or 200 for dfsdt).
    #[arg(long)]
    pub budget: Option<u32>,
    /// Character cap of the rendered state.
    #[arg(long)]
    pub state_cap: Option<usize>,
    /// Character cap applied to each raw observation.
    #[arg(long)]
    pub observation_window: Option<usize>,
    /// Transcript window of the react baseline, in characters.
    #[arg(long)]
    pub react_window: Option<usize>,
    /// Children tried per node by the dfsdt baseline.
    #[arg(long)]
    pub dfsdt_max_children: Option<u32>,
    /// Split the instruction into subtasks before the first step.
    #[arg(long)]
    pub decompose: bool,
    /// Directory of prompt template overrides.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fully resolved engine settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub provider: ProviderMode,
    pub policy: Option<PathBuf>,
    pub budget: Option<u32>,
    pub state_cap: Option<usize>,
    pub observation_window: Option<usize>,
    pub react_window: Option<usize>,
    pub dfsdt_max_children: Option<u32>,
    pub decompose: bool,
    pub templates: Option<PathBuf>,
    pub out: PathBuf,
}

pub const DEFAULT_OUT: &str = "runs";

impl Settings {
    pub fn resolve(flags: &EngineFlags, file: &FileConfig) -> Self {
        Self {
            provider: flags
                .provider
                .or(file.provider)
                .unwrap_or(ProviderMode::Scripted),
            policy: flags.policy.clone().or_else(|| file.policy.clone()),
            budget: flags.budget.or(file.budget),
            state_cap: flags.state_cap.or(file.state_cap),
            observation_window: flags.observation_window.or(file.observation_window),
            react_window: flags.react_window.or(file.react_window),
            dfsdt_max_children: flags.dfsdt_max_children.or(file.dfsdt_max_children),
            decompose: flags.decompose || file.decompose.unwrap_or(false),
            templates: flags.templates.clone().or_else(|| file.templates.clone()),
            out: flags
                .out
                .clone()
                .or_else(|| file.out.clone())
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        }
    }

    pub fn engine_config(&self, method: Method) -> Result<EngineConfig> {
        let mut c = EngineConfig::for_method(method);
        if let Some(b) = self.budget {
            c.step_budget = b;
        }
        if let Some(v) = self.state_cap {
            c.state_cap_chars = v;
        }
        if let Some(v) = self.observation_window {
            c.observation_window_chars = v;
        }
        if let Some(v) = self.react_window {
            c.react_memory_window_chars = v;
        }
        if let Some(v) = self.dfsdt_max_children {
            c.dfsdt_max_children = v;
        }
        c.use_decomposition = self.decompose;
        c.validate()?;
        Ok(c)
    }

    pub fn prompts(&self) -> Result<PromptSet> {
        match &self.templates {
            Some(dir) => {
                if !dir.is_dir() {
                    bail!("template directory {} does not exist", dir.display());
                }
                PromptSet::with_overrides(dir)
                    .with_context(|| format!("reading templates from {}", dir.display()))
            }
            None => Ok(PromptSet::default()),
        }
    }
}

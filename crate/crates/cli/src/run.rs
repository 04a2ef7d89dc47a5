use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use sum2act::engine::Method;
use sum2act::provider::load_policy;
use sum2act::provider::{LiveClient, LiveClientConfig, ENV_BASE_URL, ENV_MODEL};
use sum2act::sandbox::{check_pass, load_scenario};
use sum2act::sandbox::{EndpointSpec, LiveInvoker};
use sum2act::types::validate_catalog;
use sum2act::{run_episode, Instruction, Provider, ScriptedProvider, ToolSpec};

use crate::config::{parse_methods, EngineFlags, FileConfig, ProviderMode, Settings};
use crate::traces::{trace_name, write_fresh};
use crate::{EXIT_FINISHED, EXIT_NOT_FINISHED};

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// sum2act, react or dfsdt.
    #[arg(long)]
    pub method: Option<String>,
    /// Sandbox scenario file.
    #[arg(long, conflicts_with_all = ["instruction", "tools", "endpoints"])]
    pub scenario: Option<PathBuf>,
    /// Free-text instruction, run against live tool endpoints.
    #[arg(long)]
    pub instruction: Option<String>,
    /// Instruction id used in the trace (with --instruction).
    #[arg(long, default_value = "instruction")]
    pub id: String,
    /// JSON array of tool specs (with --instruction).
    #[arg(long)]
    pub tools: Option<PathBuf>,
    /// JSON endpoint map for the tools (with --instruction).
    #[arg(long)]
    pub endpoints: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineFlags,
}

pub fn single_method(flag: Option<&str>, file: &FileConfig) -> Result<Method> {
    let methods = match (flag, &file.method) {
        (Some(m), _) => parse_methods(&m.split(',').collect::<Vec<_>>())?,
        (None, Some(list)) => list.parse()?,
        (None, None) => vec![Method::Sum2Act],
    };
    if methods.len() != 1 {
        bail!("run takes exactly one method, got {}", methods.len());
    }
    Ok(methods[0])
}

pub fn live_provider() -> Result<LiveClient> {
    let config = LiveClientConfig::from_env()
        .with_context(|| format!("live provider needs {ENV_BASE_URL} and {ENV_MODEL} to be set"))?;
    Ok(LiveClient::new(config))
}

pub fn scripted_provider(policy: Option<&Path>) -> Result<ScriptedProvider> {
    let path =
        policy.context("scripted provider needs a policy file (--policy or the scenario's own)")?;
    if !path.is_file() {
        bail!("policy file {} does not exist", path.display());
    }
    Ok(ScriptedProvider::new(load_policy(path)?))
}

fn load_tools(path: &Path) -> Result<Vec<ToolSpec>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading tools {}", path.display()))?;
    let tools: Vec<ToolSpec> =
        serde_json::from_str(&text).with_context(|| format!("parsing tools {}", path.display()))?;
    validate_catalog(&tools).with_context(|| format!("invalid tools in {}", path.display()))?;
    Ok(tools)
}

pub fn execute(args: &RunArgs, file: &FileConfig) -> Result<u8> {
    let settings = Settings::resolve(&args.engine, file);
    let method = single_method(args.method.as_deref(), file)?;
    let config = settings.engine_config(method)?;
    let prompts = settings.prompts()?;

    let scenario_path = args.scenario.clone().or_else(|| {
        if args.instruction.is_none() {
            file.scenario.clone()
        } else {
            None
        }
    });

    let (episode, passed) = if let Some(path) = scenario_path {
        let scenario = load_scenario(&path)?;
        let provider: Arc<dyn Provider> = match settings.provider {
            ProviderMode::Scripted => Arc::new(scripted_provider(
                settings.policy.as_deref().or(scenario.policy.as_deref()),
            )?),
            ProviderMode::Live => Arc::new(live_provider()?),
        };
        let mut session = scenario.session();
        let episode = run_episode(
            method,
            provider.as_ref(),
            &prompts,
            &scenario.instruction,
            &scenario.tools,
            &config,
            &mut session,
        )?;
        let passed = check_pass(&scenario, &episode);
        (episode, Some(passed))
    } else {
        let text = args
            .instruction
            .as_deref()
            .context("give --scenario, or --instruction with --tools and --endpoints")?;
        let tools_path = args
            .tools
            .clone()
            .or_else(|| file.tools.clone())
            .context("--tools is required")?;
        let endpoints_path = args
            .endpoints
            .clone()
            .or_else(|| file.endpoints.clone())
            .context("--endpoints is required")?;
        let tools = load_tools(&tools_path)?;
        let spec = EndpointSpec::load(&endpoints_path)?;
        if let Some(missing) = tools.iter().find(|t| !spec.tools.contains_key(&t.name)) {
            bail!("no endpoint configured for tool {}", missing.name);
        }
        let provider: Arc<dyn Provider> = match settings.provider {
            ProviderMode::Scripted => Arc::new(scripted_provider(settings.policy.as_deref())?),
            ProviderMode::Live => Arc::new(live_provider()?),
        };
        let mut invoker = LiveInvoker::new(spec, tools.clone());
        let instruction = Instruction::new(args.id.clone(), text);
        let episode = run_episode(
            method,
            provider.as_ref(),
            &prompts,
            &instruction,
            &tools,
            &config,
            &mut invoker,
        )?;
        (episode, None)
    };

    let path = settings
        .out
        .join(trace_name(&episode.instruction.id, method.label()));
    write_fresh(&path, std::slice::from_ref(&episode))?;

    let terminal = episode
        .terminal
        .as_ref()
        .map_or("Unfinished", |t| t.label());
    println!("status: {terminal}");
    println!("steps: {}", episode.steps.len());
    if let Some(answer) = episode.answer() {
        println!("answer: {answer}");
    }
    if let Some(p) = passed {
        println!("pass: {p}");
    }
    println!("trace: {}", path.display());
    Ok(if episode.is_finished() {
        EXIT_FINISHED
    } else {
        EXIT_NOT_FINISHED
    })
}

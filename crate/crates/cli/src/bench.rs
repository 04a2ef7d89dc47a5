use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use sum2act::batch::{run_bench, summarize, BenchCase, BenchPlan};
use sum2act::engine::Method;
use sum2act::sandbox::load_scenario_dir;
use sum2act::Provider;

use crate::config::{parse_methods, EngineFlags, FileConfig, ProviderMode, Settings};
use crate::run::{live_provider, scripted_provider};
use crate::traces::{trace_name, write_fresh};
use crate::EXIT_FINISHED;

#[derive(Debug, clap::Args)]
pub struct BenchArgs {
    /// Directory of `*.scenario.json` files.
    #[arg(long)]
    pub scenario_dir: Option<PathBuf>,
    /// Comma-separated methods (default: all three).
    #[arg(long, alias = "methods")]
    pub method: Option<String>,
    /// Worker threads (default: one per core; 1 runs sequentially).
    #[arg(long)]
    pub concurrency: Option<usize>,
    #[command(flatten)]
    pub engine: EngineFlags,
}

fn methods(flag: Option<&str>, file: &FileConfig) -> Result<Vec<Method>> {
    match (flag, &file.method) {
        (Some(m), _) => parse_methods(&m.split(',').collect::<Vec<_>>()),
        (None, Some(list)) => list.parse(),
        (None, None) => Ok(Method::ALL.to_vec()),
    }
}

pub fn execute(args: &BenchArgs, file: &FileConfig) -> Result<u8> {
    let settings = Settings::resolve(&args.engine, file);
    let methods = methods(args.method.as_deref(), file)?;
    let configs = methods
        .iter()
        .map(|m| settings.engine_config(*m))
        .collect::<Result<Vec<_>>>()?;
    let concurrency = args.concurrency.or(file.concurrency);
    if concurrency == Some(0) {
        bail!("--concurrency must be at least 1");
    }
    let dir = args
        .scenario_dir
        .clone()
        .or_else(|| file.scenario_dir.clone())
        .context("--scenario-dir is required")?;
    if !dir.is_dir() {
        bail!("scenario directory {} does not exist", dir.display());
    }
    // Every scenario and policy is loaded before anything runs.
    let scenarios = load_scenario_dir(&dir)?;
    if scenarios.is_empty() {
        bail!("no *.scenario.json files in {}", dir.display());
    }
    let live: Option<Arc<dyn Provider>> = match settings.provider {
        ProviderMode::Live => Some(Arc::new(live_provider()?)),
        ProviderMode::Scripted => None,
    };
    let cases = scenarios
        .into_iter()
        .map(|scenario| {
            let provider = match &live {
                Some(p) => Arc::clone(p),
                None => {
                    let policy = settings.policy.clone().or_else(|| scenario.policy.clone());
                    Arc::new(
                        scripted_provider(policy.as_deref())
                            .with_context(|| format!("scenario {}", scenario.id))?,
                    ) as Arc<dyn Provider>
                }
            };
            Ok(BenchCase { scenario, provider })
        })
        .collect::<Result<Vec<_>>>()?;

    let plan = BenchPlan {
        methods,
        configs,
        prompts: settings.prompts()?,
        concurrency,
    };
    let outcomes = run_bench(&plan, &cases)?;

    let trace_dir = settings.out.join("traces");
    for o in &outcomes {
        write_fresh(
            &trace_dir.join(trace_name(&o.scenario_id, o.method.label())),
            std::slice::from_ref(&o.episode),
        )?;
    }
    let report = summarize(&plan, &cases, &outcomes)?;
    let text = report.text();
    std::fs::write(settings.out.join("report.json"), report.to_json())
        .context("writing report.json")?;
    std::fs::write(settings.out.join("report.txt"), &text).context("writing report.txt")?;

    print!("{text}");
    for m in &plan.methods {
        let mine: Vec<_> = outcomes.iter().filter(|o| o.method == *m).collect();
        let passed = mine.iter().filter(|o| o.passed).count();
        println!("{m}: {passed}/{} scenarios passed", mine.len());
    }
    println!("traces: {}", trace_dir.display());
    Ok(EXIT_FINISHED)
}

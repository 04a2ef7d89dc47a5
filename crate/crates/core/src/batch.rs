//! Batch execution of independent episodes.
//!
//! With the `parallel` feature (default) work items run on a rayon pool;
//! without it, or through [`map_sequential`], they run one after another.
//! Results always come back in input order.

use std::sync::Arc;

use crate::engine::{run_episode, EngineConfig, Method};
use crate::episode::{Episode, EpisodeError};
use crate::eval::{pass_rate_row, Report, ReportRow};
use crate::prompts::PromptSet;
use crate::provider::{load_policy, PolicyError, Provider, ScriptedProvider};
use crate::sandbox::{check_pass, Scenario};

pub fn map_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Applies `f` to every item, on at most `concurrency` threads when given.
#[cfg(feature = "parallel")]
pub fn map<T, R, F>(items: &[T], concurrency: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match concurrency {
        Some(1) => map_sequential(items, f),
        Some(n) => match rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
        {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(e) => {
                tracing::warn!(error = %e, "thread pool unavailable, running sequentially");
                map_sequential(items, f)
            }
        },
        None => items.par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map<T, R, F>(items: &[T], _concurrency: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_sequential(items, f)
}

/// A scenario paired with the provider that drives it.
#[derive(Clone)]
pub struct BenchCase {
    pub scenario: Scenario,
    pub provider: Arc<dyn Provider>,
}

impl BenchCase {
    /// Pairs a scenario with a scripted provider built from its own policy
    /// file.
    pub fn scripted(scenario: Scenario) -> Result<Self, PolicyError> {
        let path = scenario.policy.clone().ok_or_else(|| PolicyError::Parse {
            path: scenario.id.clone(),
            line: 0,
            message: "scenario names no policy file".into(),
        })?;
        let policy = load_policy(&path)?;
        Ok(Self {
            scenario,
            provider: Arc::new(ScriptedProvider::new(policy)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchOutcome {
    pub scenario_id: String,
    pub method: Method,
    pub episode: Episode,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct BenchPlan {
    pub methods: Vec<Method>,
    /// Per-method configuration, parallel to `methods`.
    pub configs: Vec<EngineConfig>,
    pub prompts: PromptSet,
    pub concurrency: Option<usize>,
}

impl BenchPlan {
    pub fn with_defaults(methods: Vec<Method>) -> Self {
        let configs = methods
            .iter()
            .map(|m| EngineConfig::for_method(*m))
            .collect();
        Self {
            methods,
            configs,
            prompts: PromptSet::default(),
            concurrency: None,
        }
    }
}

fn run_one(plan: &BenchPlan, case: &BenchCase, idx: usize) -> Result<BenchOutcome, EpisodeError> {
    let method = plan.methods[idx];
    let s = &case.scenario;
    let mut session = s.session();
    let episode = run_episode(
        method,
        case.provider.as_ref(),
        &plan.prompts,
        &s.instruction,
        &s.tools,
        &plan.configs[idx],
        &mut session,
    )?;
    let passed = check_pass(s, &episode);
    Ok(BenchOutcome {
        scenario_id: s.id.clone(),
        method,
        episode,
        passed,
    })
}

/// Runs every (scenario, method) pair. Outcomes are ordered scenario-major,
/// method-minor, independent of the thread count.
pub fn run_bench(plan: &BenchPlan, cases: &[BenchCase]) -> Result<Vec<BenchOutcome>, EpisodeError> {
    if plan.configs.len() != plan.methods.len() {
        return Err(EpisodeError::Config(
            "one engine config per method is required".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = (0..cases.len())
        .flat_map(|c| (0..plan.methods.len()).map(move |m| (c, m)))
        .collect();
    map(&jobs, plan.concurrency, |&(c, m)| {
        run_one(plan, &cases[c], m)
    })
    .into_iter()
    .collect()
}

/// [`run_bench`] without any worker threads.
pub fn run_bench_sequential(
    plan: &BenchPlan,
    cases: &[BenchCase],
) -> Result<Vec<BenchOutcome>, EpisodeError> {
    let sequential = BenchPlan {
        concurrency: Some(1),
        ..plan.clone()
    };
    run_bench(&sequential, cases)
}

/// One pass-rate row per method, in plan order. Scenarios marked
/// unsolvable are left out of the rates.
pub fn summarize(
    plan: &BenchPlan,
    cases: &[BenchCase],
    outcomes: &[BenchOutcome],
) -> Result<Report, crate::eval::EvalError> {
    let solvable = |id: &str| {
        cases
            .iter()
            .any(|c| c.scenario.id == id && c.scenario.solvable)
    };
    let rows: Vec<ReportRow> = plan
        .methods
        .iter()
        .filter_map(|m| {
            let pairs: Vec<(Episode, bool)> = outcomes
                .iter()
                .filter(|o| o.method == *m && solvable(&o.scenario_id))
                .map(|o| (o.episode.clone(), o.passed))
                .collect();
            (!pairs.is_empty()).then(|| pass_rate_row(m.label(), &pairs))
        })
        .collect::<Result<_, _>>()?;
    Ok(Report::new(rows))
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sum2act::eval::{compare_traces, comparison_json, Judge, LlmJudge, Metric, Report, RuleJudge};
use sum2act::sandbox::{check_pass, load_scenario_dir};
use sum2act::{Episode, PromptSet, Scenario};

use crate::config::{FileConfig, JudgeMode};
use crate::run::live_provider;
use crate::EXIT_FINISHED;

#[derive(Debug, clap::Args)]
pub struct CompareArgs {
    /// Trace file or directory of `.jsonl` traces for side A.
    pub a: PathBuf,
    /// Trace file or directory of `.jsonl` traces for side B.
    pub b: PathBuf,
    /// Keep only side-A episodes with this method label.
    #[arg(long)]
    pub label_a: Option<String>,
    /// Keep only side-B episodes with this method label.
    #[arg(long)]
    pub label_b: Option<String>,
    /// Rule-based judge, or a live model as judge.
    #[arg(long, value_enum)]
    pub judge: Option<JudgeMode>,
    /// Scenarios used to decide pass/fail; without it a trace passes when it
    /// finished.
    #[arg(long)]
    pub scenario_dir: Option<PathBuf>,
    /// Directory for `compare.json` and `compare.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory of prompt template overrides (llm judge).
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

fn side(
    path: &Path,
    label: Option<&str>,
    scenarios: &BTreeMap<String, Scenario>,
) -> Result<Vec<(Episode, bool)>> {
    let mut episodes = crate::traces::load_episodes(path)?;
    if let Some(l) = label {
        episodes.retain(|e| e.method_label == l);
        if episodes.is_empty() {
            bail!("no episodes labelled {l} in {}", path.display());
        }
    }
    episodes
        .into_iter()
        .map(|e| {
            let passed = if scenarios.is_empty() {
                e.is_finished()
            } else {
                let s = scenarios
                    .get(&e.instruction.id)
                    .with_context(|| format!("no scenario for instruction {}", e.instruction.id))?;
                check_pass(s, &e)
            };
            Ok((e, passed))
        })
        .collect()
}

pub fn execute(args: &CompareArgs, file: &FileConfig) -> Result<u8> {
    let scenarios: BTreeMap<String, Scenario> = match args
        .scenario_dir
        .clone()
        .or_else(|| file.scenario_dir.clone())
    {
        Some(dir) => load_scenario_dir(&dir)?
            .into_iter()
            .map(|s| (s.id.clone(), s))
            .collect(),
        None => BTreeMap::new(),
    };
    let a = side(&args.a, args.label_a.as_deref(), &scenarios)?;
    let b = side(&args.b, args.label_b.as_deref(), &scenarios)?;

    let judge: Box<dyn Judge> = match args.judge.or(file.judge).unwrap_or(JudgeMode::Rule) {
        JudgeMode::Rule => Box::new(RuleJudge),
        JudgeMode::Llm => {
            let prompts = match args.templates.clone().or_else(|| file.templates.clone()) {
                Some(dir) => PromptSet::with_overrides(&dir)
                    .with_context(|| format!("reading templates from {}", dir.display()))?,
                None => PromptSet::default(),
            };
            Box::new(LlmJudge::new(live_provider()?, prompts))
        }
    };
    let comparison = compare_traces(&a, &b, judge.as_ref())?;
    let report = Report::new(vec![comparison.row.clone()]);
    let text = format!(
        "{}\n{}",
        report.table(Metric::WinRate),
        report.table(Metric::PassRate)
    );
    if let Some(out) = args.out.clone().or_else(|| file.out.clone()) {
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        std::fs::write(out.join("compare.json"), comparison_json(&comparison))
            .context("writing compare.json")?;
        std::fs::write(out.join("compare.txt"), &text).context("writing compare.txt")?;
    }
    print!("{text}");
    Ok(EXIT_FINISHED)
}

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use sum2act::episode::read_trace;
use sum2act::types::truncate_chars;
use sum2act::{Episode, State};

use crate::EXIT_FINISHED;

const PREVIEW_CHARS: usize = 120;

#[derive(Debug, clap::Args)]
pub struct ReplayArgs {
    /// Trace file (JSON Lines, one episode per line).
    pub trace: PathBuf,
}

fn preview(text: &str) -> String {
    let flat = text.split_whitespace().collect::<Vec<_>>().join(" ");
    let cut = truncate_chars(&flat, PREVIEW_CHARS);
    if cut.len() < flat.len() {
        format!("{cut}...")
    } else {
        flat
    }
}

/// `+`/`-` lines for entries added to or dropped from the state.
fn state_diff(prev: &State, next: &State) -> Vec<String> {
    let mut lines = Vec::new();
    for r in &prev.current_results {
        if !next.current_results.contains(r) {
            lines.push(format!("- result [step {}] {}", r.step, preview(&r.text)));
        }
    }
    for r in &next.current_results {
        if !prev.current_results.contains(r) {
            lines.push(format!("+ result [step {}] {}", r.step, preview(&r.text)));
        }
    }
    for f in &prev.failure_history {
        if !next.failure_history.contains(f) {
            lines.push(format!(
                "- failure [step {}] {}",
                f.step,
                preview(&f.render())
            ));
        }
    }
    for f in &next.failure_history {
        if !prev.failure_history.contains(f) {
            lines.push(format!(
                "+ failure [step {}] {}",
                f.step,
                preview(&f.render())
            ));
        }
    }
    lines
}

pub fn render_episode(e: &Episode) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "episode {} [{}] budget {}",
        e.instruction.id, e.method_label, e.step_budget
    );
    let _ = writeln!(out, "instruction: {}", preview(&e.instruction.text));
    let mut prev = State::initial();
    for (i, step) in e.steps.iter().enumerate() {
        let _ = write!(out, "\nstep {}", i + 1);
        if let Some(pos) = step.search {
            let _ = write!(out, " (depth {}, branch {})", pos.depth, pos.branch);
        }
        out.push('\n');
        let _ = writeln!(out, "  action: {}", step.action);
        if step.parse_retries > 0 {
            let _ = writeln!(out, "  parse retries: {}", step.parse_retries);
        }
        match &step.observation {
            Some(obs) => {
                let _ = writeln!(out, "  observation: {}", obs.status);
                match obs.error_descriptor() {
                    Some(err) => {
                        let _ = writeln!(out, "  error: {}", preview(&err));
                    }
                    None => {
                        let _ = writeln!(out, "  payload: {}", preview(&obs.payload));
                    }
                }
            }
            None => out.push_str("  observation: none\n"),
        }
        let diff = state_diff(&prev, &step.state);
        if diff.is_empty() {
            out.push_str("  state: unchanged\n");
        } else {
            out.push_str("  state:\n");
            for line in diff {
                let _ = writeln!(out, "    {line}");
            }
        }
        prev = step.state.clone();
    }
    let terminal = match &e.terminal {
        Some(sum2act::Terminal::Finished { answer }) => format!("Finished: {}", preview(answer)),
        Some(sum2act::Terminal::AbortedParseFailure { reason }) => {
            format!("AbortedParseFailure: {}", preview(reason))
        }
        Some(t) => t.label().to_owned(),
        None => "Unfinished".to_owned(),
    };
    let _ = writeln!(out, "\nterminal: {terminal}");
    out
}

pub fn execute(args: &ReplayArgs) -> Result<u8> {
    let episodes = read_trace(&args.trace)
        .with_context(|| format!("reading trace {}", args.trace.display()))?;
    if episodes.is_empty() {
        bail!("{} contains no episodes", args.trace.display());
    }
    let rendered: Vec<String> = episodes.iter().map(render_episode).collect();
    print!("{}", rendered.join("\n"));
    Ok(EXIT_FINISHED)
}

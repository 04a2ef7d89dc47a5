//! Pass rate, tie-split win rate, pairwise judges and table reports.
//!
//! Percentages are exact rationals; rounding to one decimal (half-up)
//! happens only when a value is displayed or serialized.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::json;
use thiserror::Error;

use crate::episode::Episode;
use crate::json::first_object_with_key;
use crate::prompts::PromptSet;
use crate::provider::{CompletionRequest, Provider};
use crate::router::CORRECTION_HEADER;
use crate::types::Instruction;

/// Label used for instructions without a subset.
pub const DEFAULT_SUBSET: &str = "all";
pub const AVERAGE_COLUMN: &str = "Average";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("cannot compute a rate over an empty list")]
    Empty,
    #[error("judgment for {instruction:?} does not involve {method:?}")]
    ForeignJudgment { instruction: String, method: String },
    #[error("a method cannot be compared with itself ({0:?})")]
    SelfComparison(String),
    #[error("episodes are for different instructions ({0:?} vs {1:?})")]
    InstructionMismatch(String, String),
    #[error("duplicate subset label {0:?}")]
    DuplicateSubset(String),
    #[error("subset {label:?}: {message}")]
    InvalidSubset { label: String, message: String },
    #[error(
        "trace sets differ: missing from A {missing_from_a:?}, missing from B {missing_from_b:?}"
    )]
    IdMismatch {
        missing_from_a: Vec<String>,
        missing_from_b: Vec<String>,
    },
    #[error("duplicate instruction id {0:?} in one trace set")]
    DuplicateInstruction(String),
    #[error("invalid percentage {0:?}")]
    BadPercentage(String),
}

/// An exact percentage in `[0, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Percentage(Ratio<i128>);

impl Percentage {
    pub const ZERO: Percentage = Percentage(Ratio::new_raw(0, 1));
    pub const HUNDRED: Percentage = Percentage(Ratio::new_raw(100, 1));

    /// `100 * part / whole`.
    pub fn of(part: u64, whole: u64) -> Result<Self, EvalError> {
        if whole == 0 {
            return Err(EvalError::Empty);
        }
        Ok(Self(Ratio::new(100 * part as i128, whole as i128)))
    }

    pub fn from_tenths(tenths: i64) -> Self {
        Self(Ratio::new(tenths as i128, 10))
    }

    pub fn from_ratio(r: Ratio<i128>) -> Self {
        Self(r)
    }

    pub fn ratio(self) -> Ratio<i128> {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }

    /// Value in tenths of a percent, rounded half away from zero.
    pub fn rounded_tenths(self) -> i128 {
        let (n, d) = (*self.0.numer(), *self.0.denom());
        let twice = 20 * n.abs() + d;
        let t = twice / (2 * d);
        if n < 0 {
            -t
        } else {
            t
        }
    }

    pub fn is_valid(self) -> bool {
        self >= Self::ZERO && self <= Self::HUNDRED
    }

    /// Unweighted mean.
    pub fn mean(values: &[Percentage]) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::Empty);
        }
        let sum: Ratio<i128> = values.iter().map(|p| p.0).sum();
        Ok(Self(sum / Ratio::from_integer(values.len() as i128)))
    }
}

impl fmt::Display for Percentage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.rounded_tenths();
        let sign = if t < 0 { "-" } else { "" };
        write!(f, "{sign}{}.{}", t.abs() / 10, t.abs() % 10)
    }
}

impl FromStr for Percentage {
    type Err = EvalError;

    /// Parses a plain decimal such as `42.5` or `70`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EvalError::BadPercentage(s.to_owned());
        let s = s.trim();
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty()
            || !int.bytes().all(|b| b.is_ascii_digit())
            || !frac.bytes().all(|b| b.is_ascii_digit())
        {
            return Err(bad());
        }
        if frac.len() > 12 {
            return Err(bad());
        }
        let digits: i128 = format!("{int}{frac}").parse().map_err(|_| bad())?;
        Ok(Self(Ratio::new(digits, 10i128.pow(frac.len() as u32))))
    }
}

impl Serialize for Percentage {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.rounded_tenths() as f64 / 10.0)
    }
}

impl<'de> Deserialize<'de> for Percentage {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if !v.is_finite() {
            return Err(serde::de::Error::custom("percentage must be finite"));
        }
        Ok(Self::from_tenths((v * 10.0).round() as i64))
    }
}

/// Share of passed episodes.
pub fn pass_rate<I: IntoIterator<Item = bool>>(flags: I) -> Result<Percentage, EvalError> {
    let (mut passed, mut total) = (0u64, 0u64);
    for f in flags {
        total += 1;
        passed += u64::from(f);
    }
    Percentage::of(passed, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Outcome {
    AWins,
    BWins,
    Tie,
}

impl Outcome {
    pub fn flipped(self) -> Self {
        match self {
            Outcome::AWins => Outcome::BWins,
            Outcome::BWins => Outcome::AWins,
            Outcome::Tie => Outcome::Tie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairJudgment {
    pub instruction_id: String,
    pub method_a: String,
    pub method_b: String,
    pub outcome: Outcome,
    #[serde(default)]
    pub rationale: String,
}

impl PairJudgment {
    pub fn new(
        instruction_id: impl Into<String>,
        method_a: impl Into<String>,
        method_b: impl Into<String>,
        outcome: Outcome,
        rationale: impl Into<String>,
    ) -> Result<Self, EvalError> {
        let (method_a, method_b) = (method_a.into(), method_b.into());
        if method_a == method_b {
            return Err(EvalError::SelfComparison(method_a));
        }
        Ok(Self {
            instruction_id: instruction_id.into(),
            method_a,
            method_b,
            outcome,
            rationale: rationale.into(),
        })
    }

    /// The same judgment seen from the other side.
    pub fn swapped(&self) -> Self {
        Self {
            instruction_id: self.instruction_id.clone(),
            method_a: self.method_b.clone(),
            method_b: self.method_a.clone(),
            outcome: self.outcome.flipped(),
            rationale: self.rationale.clone(),
        }
    }
}

/// `100 * (wins + ties / 2) / total` from `method`'s point of view.
pub fn win_rate(judgments: &[PairJudgment], method: &str) -> Result<Percentage, EvalError> {
    if judgments.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut points = 0u64; // half-wins
    for j in judgments {
        if j.method_a == j.method_b {
            return Err(EvalError::SelfComparison(j.method_a.clone()));
        }
        let outcome = if j.method_a == method {
            j.outcome
        } else if j.method_b == method {
            j.outcome.flipped()
        } else {
            return Err(EvalError::ForeignJudgment {
                instruction: j.instruction_id.clone(),
                method: method.to_owned(),
            });
        };
        points += match outcome {
            Outcome::AWins => 2,
            Outcome::Tie => 1,
            Outcome::BWins => 0,
        };
    }
    Percentage::of(points, 2 * judgments.len() as u64)
}

/// An episode together with its pass verdict.
#[derive(Debug, Clone, Copy)]
pub struct Candidate<'a> {
    pub episode: &'a Episode,
    pub passed: bool,
}

pub trait Judge: Send + Sync {
    /// Returns the outcome and a short rationale.
    fn compare(
        &self,
        instruction: &Instruction,
        a: Candidate<'_>,
        b: Candidate<'_>,
    ) -> (Outcome, String);
}

pub fn judge_pair<J: Judge + ?Sized>(
    judge: &J,
    instruction: &Instruction,
    a: Candidate<'_>,
    b: Candidate<'_>,
) -> Result<PairJudgment, EvalError> {
    for c in [&a, &b] {
        if c.episode.instruction.id != instruction.id {
            return Err(EvalError::InstructionMismatch(
                instruction.id.clone(),
                c.episode.instruction.id.clone(),
            ));
        }
    }
    let (outcome, rationale) = judge.compare(instruction, a, b);
    PairJudgment::new(
        instruction.id.clone(),
        a.episode.method_label.clone(),
        b.episode.method_label.clone(),
        outcome,
        rationale,
    )
}

/// Deterministic judge: passing beats failing; between two passes the
/// shorter path wins.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleJudge;

impl Judge for RuleJudge {
    fn compare(&self, _: &Instruction, a: Candidate<'_>, b: Candidate<'_>) -> (Outcome, String) {
        let (sa, sb) = (a.episode.steps.len(), b.episode.steps.len());
        match (a.passed, b.passed) {
            (true, true) if sa < sb => (
                Outcome::AWins,
                format!("both passed; A used {sa} steps, B {sb}"),
            ),
            (true, true) if sb < sa => (
                Outcome::BWins,
                format!("both passed; B used {sb} steps, A {sa}"),
            ),
            (true, true) => (Outcome::Tie, format!("both passed in {sa} steps")),
            (true, false) => (Outcome::AWins, "only A passed".into()),
            (false, true) => (Outcome::BWins, "only B passed".into()),
            (false, false) => (Outcome::Tie, "neither passed".into()),
        }
    }
}

/// Model-backed judge weighing answer quality, step count and tool variety.
pub struct LlmJudge<P> {
    provider: P,
    prompts: PromptSet,
    max_retries: u32,
}

impl<P: Provider> LlmJudge<P> {
    pub fn new(provider: P, prompts: PromptSet) -> Self {
        Self {
            provider,
            prompts,
            max_retries: crate::router::DEFAULT_PARSE_RETRIES,
        }
    }
}

/// Text form of one solution path as shown to the judge.
pub fn render_solution(c: Candidate<'_>) -> String {
    let e = c.episode;
    let mut out = String::new();
    let status = e.terminal.as_ref().map_or("Unfinished", |t| t.label());
    let _ = writeln!(out, "Final status: {status}");
    let _ = writeln!(out, "Answer: {}", e.answer().unwrap_or("(none)"));
    let _ = writeln!(out, "Steps: {}", e.steps.len());
    let tools = e.tools_used();
    let _ = writeln!(
        out,
        "Distinct tools used: {} ({})",
        tools.len(),
        tools.join(", ")
    );
    out.push_str("Actions:");
    for (i, step) in e.steps.iter().enumerate() {
        let _ = write!(out, "\n{}. {}", i + 1, step.action);
        if let Some(obs) = &step.observation {
            let _ = write!(out, " -> {}", obs.status);
        }
    }
    out
}

pub fn parse_winner(output: &str) -> Result<Outcome, String> {
    let obj =
        first_object_with_key(output, "winner").ok_or("no JSON object with a \"winner\" field")?;
    match obj["winner"]
        .as_str()
        .map(|s| s.trim().to_ascii_lowercase())
        .as_deref()
    {
        Some("a") => Ok(Outcome::AWins),
        Some("b") => Ok(Outcome::BWins),
        Some("tie") => Ok(Outcome::Tie),
        _ => Err("\"winner\" must be \"A\", \"B\" or \"Tie\"".into()),
    }
}

impl<P: Provider> Judge for LlmJudge<P> {
    fn compare(
        &self,
        instruction: &Instruction,
        a: Candidate<'_>,
        b: Candidate<'_>,
    ) -> (Outcome, String) {
        let prompt = self.prompts.judge.render(&[
            ("instruction", &instruction.text),
            ("solution_a", &render_solution(a)),
            ("solution_b", &render_solution(b)),
        ]);
        let mut text = prompt.clone();
        let mut last_error = String::new();
        for attempt in 0..=self.max_retries {
            let reply = match self
                .provider
                .complete(&CompletionRequest::prompt(text.as_str()))
            {
                Ok(r) => r,
                Err(e) => {
                    tracing::warn!(instruction = %instruction.id, error = %e, "judge unavailable, scoring a tie");
                    return (Outcome::Tie, format!("judge unavailable: {e}"));
                }
            };
            match parse_winner(&reply) {
                Ok(outcome) => {
                    let rationale = first_object_with_key(&reply, "winner")
                        .and_then(|o| {
                            o.get("rationale")
                                .and_then(|r| r.as_str())
                                .map(str::to_owned)
                        })
                        .unwrap_or_default();
                    return (outcome, rationale);
                }
                Err(e) => {
                    tracing::debug!(attempt, error = %e, "judge reply did not parse");
                    text = format!(
                        "{prompt}\n\n{CORRECTION_HEADER}\nYour previous reply could not be used: {e}. \
                         Reply again with exactly one JSON object with a \"winner\" field."
                    );
                    last_error = e;
                }
            }
        }
        tracing::warn!(instruction = %instruction.id, error = %last_error, "judge output unusable, scoring a tie");
        (Outcome::Tie, format!("judge output unusable: {last_error}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetReport {
    pub subset_label: String,
    pub pass_rate: Percentage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub win_rate: Option<Percentage>,
    pub n: usize,
}

impl SubsetReport {
    pub fn new(
        label: impl Into<String>,
        pass_rate: Percentage,
        win_rate: Option<Percentage>,
        n: usize,
    ) -> Self {
        Self {
            subset_label: label.into(),
            pass_rate,
            win_rate,
            n,
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let invalid = |message: &str| EvalError::InvalidSubset {
            label: self.subset_label.clone(),
            message: message.to_owned(),
        };
        if self.n == 0 {
            return Err(invalid("n must be at least 1"));
        }
        if !self.pass_rate.is_valid() || self.win_rate.is_some_and(|w| !w.is_valid()) {
            return Err(invalid("rates must lie in [0, 100]"));
        }
        Ok(())
    }
}

/// One table row: per-subset values plus the unweighted mean.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub subsets: Vec<SubsetReport>,
    pub average_pass_rate: Percentage,
    /// Present only when every subset carries a win rate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub average_win_rate: Option<Percentage>,
}

pub fn aggregate(
    label: impl Into<String>,
    reports: &[SubsetReport],
) -> Result<ReportRow, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut seen = BTreeSet::new();
    for r in reports {
        r.validate()?;
        if !seen.insert(r.subset_label.as_str()) {
            return Err(EvalError::DuplicateSubset(r.subset_label.clone()));
        }
    }
    let pass: Vec<Percentage> = reports.iter().map(|r| r.pass_rate).collect();
    let win: Option<Vec<Percentage>> = reports.iter().map(|r| r.win_rate).collect();
    Ok(ReportRow {
        label: label.into(),
        subsets: reports.to_vec(),
        average_pass_rate: Percentage::mean(&pass)?,
        average_win_rate: win.map(|w| Percentage::mean(&w)).transpose()?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    PassRate,
    WinRate,
}

impl Metric {
    pub fn title(self) -> &'static str {
        match self {
            Metric::PassRate => "Pass rate (%)",
            Metric::WinRate => "Win rate (%)",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(rows: Vec<ReportRow>) -> Self {
        Self { rows }
    }

    fn columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = Vec::new();
        for row in &self.rows {
            for s in &row.subsets {
                if !cols.contains(&s.subset_label.as_str()) {
                    cols.push(&s.subset_label);
                }
            }
        }
        cols
    }

    /// Monospace table of `metric`; missing cells show `-`.
    pub fn table(&self, metric: Metric) -> String {
        let cols = self.columns();
        let mut header = vec![metric.title().to_owned()];
        header.extend(cols.iter().map(|c| c.to_string()));
        header.push(AVERAGE_COLUMN.to_owned());
        let mut grid = vec![header];
        for row in &self.rows {
            let value = |s: &SubsetReport| match metric {
                Metric::PassRate => Some(s.pass_rate),
                Metric::WinRate => s.win_rate,
            };
            let mut line = vec![row.label.clone()];
            for c in &cols {
                let cell = row
                    .subsets
                    .iter()
                    .find(|s| s.subset_label == *c)
                    .and_then(value)
                    .map_or_else(|| "-".to_owned(), |p| p.to_string());
                line.push(cell);
            }
            let avg = match metric {
                Metric::PassRate => Some(row.average_pass_rate),
                Metric::WinRate => row.average_win_rate,
            };
            line.push(avg.map_or_else(|| "-".to_owned(), |p| p.to_string()));
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|i| grid.iter().map(|r| r[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (r, line) in grid.iter().enumerate() {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
            if r == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }

    /// Pass-rate table, followed by the win-rate table when any row has one.
    pub fn text(&self) -> String {
        let mut out = self.table(Metric::PassRate);
        let has_win = self
            .rows
            .iter()
            .any(|r| r.subsets.iter().any(|s| s.win_rate.is_some()));
        if has_win {
            out.push('\n');
            out.push_str(&self.table(Metric::WinRate));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn subset_of(e: &Episode) -> String {
    e.instruction
        .subset_label
        .clone()
        .unwrap_or_else(|| DEFAULT_SUBSET.to_owned())
}

/// Groups `(episode, passed)` pairs by subset label (sorted) and builds a
/// row of pass rates.
pub fn pass_rate_row(
    label: impl Into<String>,
    outcomes: &[(Episode, bool)],
) -> Result<ReportRow, EvalError> {
    let mut groups: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for (e, passed) in outcomes {
        groups.entry(subset_of(e)).or_default().push(*passed);
    }
    let reports: Vec<SubsetReport> = groups
        .into_iter()
        .map(|(label, flags)| {
            Ok(SubsetReport::new(
                label,
                pass_rate(flags.iter().copied())?,
                None,
                flags.len(),
            ))
        })
        .collect::<Result<_, EvalError>>()?;
    aggregate(label, &reports)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub judgments: Vec<PairJudgment>,
    /// Pass rates of A with A's win rate against B, per subset.
    pub row: ReportRow,
}

fn index_by_id(set: &[(Episode, bool)]) -> Result<BTreeMap<&str, &(Episode, bool)>, EvalError> {
    let mut map = BTreeMap::new();
    for item in set {
        if map.insert(item.0.instruction.id.as_str(), item).is_some() {
            return Err(EvalError::DuplicateInstruction(
                item.0.instruction.id.clone(),
            ));
        }
    }
    Ok(map)
}

/// Judges every instruction present in both sets and reports A's win rate.
/// When both sides carry the same method label they are renamed
/// `<label> (A)` and `<label> (B)` so the judgments stay well-formed.
pub fn compare_traces<J: Judge + ?Sized>(
    a: &[(Episode, bool)],
    b: &[(Episode, bool)],
    judge: &J,
) -> Result<Comparison, EvalError> {
    let ia = index_by_id(a)?;
    let ib = index_by_id(b)?;
    let missing_from_b: Vec<String> = ia
        .keys()
        .filter(|k| !ib.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    let missing_from_a: Vec<String> = ib
        .keys()
        .filter(|k| !ia.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    if !missing_from_a.is_empty() || !missing_from_b.is_empty() {
        return Err(EvalError::IdMismatch {
            missing_from_a,
            missing_from_b,
        });
    }
    if ia.is_empty() {
        return Err(EvalError::Empty);
    }
    let pairs: Vec<_> = ia.iter().map(|(id, x)| (*x, ib[id])).collect();
    let judged = crate::batch::map(&pairs, None, |(x, y)| {
        let (outcome, rationale) = judge.compare(
            &x.0.instruction,
            Candidate {
                episode: &x.0,
                passed: x.1,
            },
            Candidate {
                episode: &y.0,
                passed: y.1,
            },
        );
        (outcome, rationale)
    });

    let mut label_a = pairs[0].0 .0.method_label.clone();
    let mut label_b = pairs[0].1 .0.method_label.clone();
    if label_a == label_b {
        label_a = format!("{label_a} (A)");
        label_b = format!("{label_b} (B)");
    }
    let mut judgments = Vec::with_capacity(pairs.len());
    let mut by_subset: BTreeMap<String, (Vec<bool>, Vec<PairJudgment>)> = BTreeMap::new();
    for ((x, _), (outcome, rationale)) in pairs.iter().zip(judged) {
        let j = PairJudgment::new(
            x.0.instruction.id.clone(),
            &label_a,
            &label_b,
            outcome,
            rationale,
        )?;
        let slot = by_subset.entry(subset_of(&x.0)).or_default();
        slot.0.push(x.1);
        slot.1.push(j.clone());
        judgments.push(j);
    }
    let reports: Vec<SubsetReport> = by_subset
        .into_iter()
        .map(|(label, (flags, js))| {
            Ok(SubsetReport::new(
                label,
                pass_rate(flags.iter().copied())?,
                Some(win_rate(&js, &label_a)?),
                js.len(),
            ))
        })
        .collect::<Result<_, EvalError>>()?;
    let row = aggregate(format!("{label_a} vs {label_b}"), &reports)?;
    Ok(Comparison { judgments, row })
}

/// Machine-readable summary of a comparison.
pub fn comparison_json(c: &Comparison) -> String {
    let mut s = serde_json::to_string_pretty(&json!({
        "row": c.row,
        "judgments": c.judgments,
    }))
    .expect("comparison serializes");
    s.push('\n');
    s
}

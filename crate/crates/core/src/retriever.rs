//! Candidate tool selection.
//!
//! [`rank`] is a lexical TF-IDF stand-in for a learned retriever: documents
//! are `name + " " + description`, tokens are whitespace-split, lowercased
//! and stripped of ASCII punctuation, and the score is the cosine similarity
//! of raw term-frequency times `1 + ln(N / df)` vectors. [`oracle`] returns
//! a fixed ground-truth tool list per instruction.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::types::{Instruction, ToolSpec};

#[derive(Debug, Error)]
pub enum RetrieverError {
    #[error("instruction {0:?} has no ground-truth entry")]
    MissingInstruction(String),
    #[error("ground-truth tool {tool:?} for instruction {instruction:?} is not in the catalog")]
    CatalogMismatch { instruction: String, tool: String },
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedTool {
    pub tool: ToolSpec,
    pub score: f64,
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|raw| {
            raw.chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(char::to_lowercase)
                .collect::<String>()
        })
        .filter(|t| !t.is_empty())
        .collect()
}

fn term_counts(tokens: Vec<String>) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t).or_insert(0.0) += 1.0;
    }
    counts
}

fn document(tool: &ToolSpec) -> String {
    format!("{} {}", tool.name, tool.description)
}

/// Ranks `catalog` against `instruction_text`, returning at most `k` tools
/// ordered by descending score, ties by ascending name.
pub fn rank(instruction_text: &str, catalog: &[ToolSpec], k: usize) -> Vec<RankedTool> {
    if catalog.is_empty() || k == 0 {
        return Vec::new();
    }
    let docs: Vec<BTreeMap<String, f64>> = catalog
        .iter()
        .map(|t| term_counts(tokenize(&document(t))))
        .collect();
    let mut df: BTreeMap<&str, f64> = BTreeMap::new();
    for doc in &docs {
        for term in doc.keys() {
            *df.entry(term.as_str()).or_insert(0.0) += 1.0;
        }
    }
    let n = docs.len() as f64;
    let idf = |term: &str| df.get(term).map(|d| 1.0 + (n / d).ln());

    let query = term_counts(tokenize(instruction_text));
    let query_vec: BTreeMap<&str, f64> = query
        .iter()
        .filter_map(|(t, tf)| idf(t).map(|w| (t.as_str(), tf * w)))
        .collect();
    let query_norm = query_vec.values().map(|w| w * w).sum::<f64>().sqrt();

    let mut ranked: Vec<RankedTool> = catalog
        .iter()
        .zip(&docs)
        .map(|(tool, doc)| {
            let mut dot = 0.0;
            let mut norm = 0.0;
            for (term, tf) in doc {
                let w = tf * idf(term).unwrap_or(0.0);
                norm += w * w;
                if let Some(q) = query_vec.get(term.as_str()) {
                    dot += q * w;
                }
            }
            let denom = query_norm * norm.sqrt();
            let score = if denom > 0.0 { dot / denom } else { 0.0 };
            RankedTool {
                tool: tool.clone(),
                score,
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.tool.name.cmp(&b.tool.name))
    });
    ranked.truncate(k);
    ranked
}

/// Instruction id to ground-truth tool names.
pub type GroundTruth = BTreeMap<String, Vec<String>>;

/// Returns exactly the ground-truth tools for `instruction`, in file order.
pub fn oracle(
    instruction: &Instruction,
    ground_truth: &GroundTruth,
    catalog: &[ToolSpec],
) -> Result<Vec<ToolSpec>, RetrieverError> {
    let names = ground_truth
        .get(&instruction.id)
        .ok_or_else(|| RetrieverError::MissingInstruction(instruction.id.clone()))?;
    names
        .iter()
        .map(|name| {
            catalog
                .iter()
                .find(|t| &t.name == name)
                .cloned()
                .ok_or_else(|| RetrieverError::CatalogMismatch {
                    instruction: instruction.id.clone(),
                    tool: name.clone(),
                })
        })
        .collect()
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth, RetrieverError> {
    let file_err = |message: String| RetrieverError::File {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))
}

/// Canonical file form: pretty JSON with sorted ids and a trailing newline.
pub fn ground_truth_to_string(gt: &GroundTruth) -> String {
    let mut s = serde_json::to_string_pretty(gt).expect("string map serializes");
    s.push('\n');
    s
}

pub fn load_catalog(path: &Path) -> Result<Vec<ToolSpec>, RetrieverError> {
    let file_err = |message: String| RetrieverError::File {
        path: path.display().to_string(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
    let tools: Vec<ToolSpec> = serde_json::from_str(&text).map_err(|e| file_err(e.to_string()))?;
    crate::types::validate_catalog(&tools).map_err(|e| file_err(e.to_string()))?;
    Ok(tools)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn three_tools() -> Vec<ToolSpec> {
        vec![
            ToolSpec::new(
                "weather_forecast",
                "Get the current weather and forecast for a city or region.",
            ),
            ToolSpec::new(
                "flight_search",
                "Search for available flights between two airports on a date.",
            ),
            ToolSpec::new(
                "currency_convert",
                "Convert an amount of money from one currency to another.",
            ),
        ]
    }

    #[test]
    fn tokenizer_contract() {
        assert_eq!(
            tokenize("What is the  Weather in Florida?"),
            vec!["what", "is", "the", "weather", "in", "florida"]
        );
        assert_eq!(
            tokenize("weather_forecast, (now)!"),
            vec!["weatherforecast", "now"]
        );
        assert!(tokenize("?? !!").is_empty());
    }

    #[test]
    fn top1_weather() {
        let query = "What is the weather in Florida?";
        let ranked = rank(query, &three_tools(), 1);
        assert_eq!(ranked[0].tool.name, "weather_forecast");

        // Brute-force oracle: distinct query tokens present in each document.
        let q: std::collections::HashSet<String> = tokenize(query).into_iter().collect();
        let overlaps: Vec<(usize, String)> = three_tools()
            .iter()
            .map(|t| {
                let d: std::collections::HashSet<String> =
                    tokenize(&document(t)).into_iter().collect();
                (q.intersection(&d).count(), t.name.clone())
            })
            .collect();
        let best = overlaps.iter().max_by_key(|(n, _)| *n).unwrap();
        assert_eq!(best, &(2, "weather_forecast".to_owned()));
    }

    #[test]
    fn empty_catalog_and_clamp() {
        assert!(rank("x", &[], 3).is_empty());
        let all = rank("flights to paris", &three_tools(), 10);
        assert_eq!(all.len(), 3);
        assert!(all.windows(2).all(|w| w[0].score >= w[1].score));
        assert_eq!(all[0].tool.name, "flight_search");
    }

    #[test]
    fn ties_break_by_name() {
        let tools = vec![
            ToolSpec::new("b", "same words"),
            ToolSpec::new("a", "same words"),
        ];
        let r = rank("unrelated", &tools, 2);
        assert_eq!(r[0].tool.name, "a");
        assert_eq!(r[0].score, 0.0);
    }

    #[test]
    fn oracle_lookup() {
        let catalog = vec![
            ToolSpec::new("a", ""),
            ToolSpec::new("b", ""),
            ToolSpec::new("c", ""),
        ];
        let mut gt = GroundTruth::new();
        gt.insert("q".into(), vec!["b".into(), "a".into()]);
        let got = oracle(&Instruction::new("q", "t"), &gt, &catalog).unwrap();
        assert_eq!(
            got.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(),
            ["b", "a"]
        );
        assert!(matches!(
            oracle(&Instruction::new("zz", "t"), &gt, &catalog),
            Err(RetrieverError::MissingInstruction(_))
        ));
        gt.insert("q".into(), vec!["a".into(), "z".into()]);
        match oracle(&Instruction::new("q", "t"), &gt, &catalog) {
            Err(RetrieverError::CatalogMismatch { tool, .. }) => assert_eq!(tool, "z"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ground_truth_file_round_trip() {
        let mut gt = GroundTruth::new();
        gt.insert("i2".into(), vec!["x".into(), "y".into()]);
        gt.insert("i1".into(), vec!["z".into()]);
        let text = ground_truth_to_string(&gt);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.json");
        std::fs::write(&path, &text).unwrap();
        let loaded = load_ground_truth(&path).unwrap();
        assert_eq!(loaded, gt);
        assert_eq!(ground_truth_to_string(&loaded), text);
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec![
            "weather", "flight", "hotel", "price", "city", "search", "book", "rate", "news",
            "stock",
        ])
        .prop_map(str::to_owned)
    }

    proptest! {
        #[test]
        fn deterministic_and_duplication_invariant(
            descs in prop::collection::vec(prop::collection::vec(word(), 1..8), 1..6),
            query in prop::collection::vec(word(), 1..5),
        ) {
            let catalog: Vec<ToolSpec> = descs
                .iter()
                .enumerate()
                .map(|(i, d)| ToolSpec::new(format!("t{i}"), d.join(" ")))
                .collect();
            let q = query.join(" ");
            let once = rank(&q, &catalog, catalog.len());
            prop_assert_eq!(&once, &rank(&q, &catalog, catalog.len()));

            // Every document duplicated verbatim: N and every df double.
            let mut doubled = catalog.clone();
            doubled.extend(catalog.iter().cloned());
            let twice = rank(&q, &doubled, doubled.len());
            for r in &twice {
                let single = once.iter().find(|x| x.tool.name == r.tool.name).unwrap();
                prop_assert!((single.score - r.score).abs() < 1e-12);
            }
        }
    }
}

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sum2act::episode::{append_trace, read_trace};
use sum2act::Episode;

/// Writes `episodes` to a fresh trace file, creating parent directories.
pub fn write_fresh(path: &Path, episodes: &[Episode]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    if path.exists() {
        std::fs::remove_file(path).with_context(|| format!("replacing {}", path.display()))?;
    }
    append_trace(path, episodes).with_context(|| format!("writing {}", path.display()))
}

pub fn trace_name(instruction_id: &str, method: &str) -> String {
    let safe: String = instruction_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}__{method}.jsonl")
}

/// Trace files named by `path`: the file itself, or every `*.jsonl` in a
/// directory, sorted.
pub fn trace_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("no .jsonl trace files in {}", path.display());
        }
        Ok(files)
    } else if path.is_file() {
        Ok(vec![path.to_path_buf()])
    } else {
        bail!("{} does not exist", path.display())
    }
}

/// Every episode under `path`; an empty result is an error.
pub fn load_episodes(path: &Path) -> Result<Vec<Episode>> {
    let mut all = Vec::new();
    for file in trace_files(path)? {
        all.extend(read_trace(&file).with_context(|| format!("reading trace {}", file.display()))?);
    }
    if all.is_empty() {
        bail!("{} contains no episodes", path.display());
    }
    Ok(all)
}

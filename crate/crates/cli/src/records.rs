//! JSON-lines logs: training losses and curation reports.

use std::io::{BufRead, Write};
use std::path::Path;

use mpgen_model::trainer::LossRecord;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, ParseError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossLine {
    pub stage: String,
    pub step: usize,
    pub loss: f64,
}

impl LossLine {
    pub fn from_records(stage: &str, records: &[LossRecord]) -> Vec<Self> {
        records
            .iter()
            .map(|r| Self {
                stage: stage.to_string(),
                step: r.step,
                loss: r.loss,
            })
            .collect()
    }
}

/// What one refinement operation did to one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationRecord {
    pub file: String,
    pub op: String,
    pub subjects_before: usize,
    pub subjects_after: usize,
    /// Operation-specific measure before and after, e.g. total penetration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub before: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after: Option<f64>,
}

pub fn write_jsonl<T: Serialize>(out: &mut impl Write, items: &[T]) -> Result<()> {
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| CliError::Runtime(e.to_string()))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(input: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| ParseError::new(i + 1, "record", e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

pub fn save_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut buf = Vec::new();
    write_jsonl(&mut buf, items)?;
    std::fs::write(path, buf).map_err(|e| CliError::from(e).in_file(path))
}

pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::from(e).in_file(path))?;
    read_jsonl(std::io::BufReader::new(file)).map_err(|e| e.in_file(path))
}

//! Line-oriented JSON files: instruction records and one-document-per-line
//! corpora.

use std::path::Path;

use lexforge_core::data::DataError;
use lexforge_core::{InstructionRecord, Subset};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetFileError {
    #[error("cannot read or write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Invalid { line: usize, msg: String },
}

impl DatasetFileError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordLine {
    instruction: String,
    output: String,
    subset: String,
}

pub fn record_to_line(r: &InstructionRecord) -> String {
    serde_json::to_string(&RecordLine {
        instruction: r.instruction.clone(),
        output: r.output.clone(),
        subset: r.subset.to_string(),
    })
    .expect("strings always serialize")
}

/// Parses records without validating field contents; empty fields are left
/// for `build_dataset` to count as rejections.
pub fn parse_records(text: &str) -> Result<Vec<InstructionRecord>, DatasetFileError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |msg: String| DatasetFileError::Invalid { line: n + 1, msg };
        let rec: RecordLine = serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
        let subset: Subset = rec
            .subset
            .parse()
            .map_err(|e: DataError| invalid(e.to_string()))?;
        out.push(InstructionRecord {
            instruction: rec.instruction,
            output: rec.output,
            subset,
        });
    }
    Ok(out)
}

pub fn records_to_text<'a>(records: impl IntoIterator<Item = &'a InstructionRecord>) -> String {
    records
        .into_iter()
        .map(|r| record_to_line(r) + "\n")
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<InstructionRecord>, DatasetFileError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetFileError::io(path, e))?;
    parse_records(&text)
}

pub fn write_records(path: &Path, records: &[InstructionRecord]) -> Result<(), DatasetFileError> {
    std::fs::write(path, records_to_text(records)).map_err(|e| DatasetFileError::io(path, e))
}

/// Non-empty lines of a corpus file, one document each.
pub fn read_corpus(path: &Path) -> Result<Vec<String>, DatasetFileError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetFileError::io(path, e))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_owned)
        .collect())
}

//! Evaluation report files: a column-aligned table and one JSON object per
//! report.

use std::collections::BTreeMap;

use lexforge_core::eval::{compare_reports, EvalReport, TaskId};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetFileError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReportLine {
    model: String,
    /// `"#1"` .. `"#8"` to a one-decimal percentage.
    scores: BTreeMap<String, f64>,
    average: f64,
}

pub fn report_to_line(r: &EvalReport) -> String {
    let line = ReportLine {
        model: r.model.clone(),
        scores: r.scores.iter().map(|s| (s.id.to_string(), s.value())).collect(),
        average: r.average(),
    };
    serde_json::to_string(&line).expect("finite numbers serialize")
}

pub fn reports_to_jsonl(reports: &[EvalReport]) -> String {
    reports.iter().map(|r| report_to_line(r) + "\n").collect()
}

/// Parses report lines. The stored average is checked against the one
/// recomputed from the task scores.
pub fn parse_reports(text: &str) -> Result<Vec<EvalReport>, DatasetFileError> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let invalid = |msg: String| DatasetFileError::Invalid { line: n + 1, msg };
        let r: ReportLine = serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
        let mut scores = Vec::with_capacity(r.scores.len());
        for (key, value) in &r.scores {
            let id = key
                .strip_prefix('#')
                .and_then(|k| k.parse().ok())
                .and_then(|k| TaskId::new(k).ok())
                .ok_or_else(|| invalid(format!("bad task key `{key}`")))?;
            scores.push((id, *value));
        }
        let report = EvalReport::from_scores(r.model, &scores);
        if (report.average() - r.average).abs() > 0.05 + 1e-9 {
            return Err(invalid(format!(
                "stored average {} disagrees with recomputed {}",
                r.average,
                report.average()
            )));
        }
        out.push(report);
    }
    Ok(out)
}

/// The comparison table, bolding the best of `designated` per column.
pub fn comparison_text(reports: &[EvalReport], designated: &[&str]) -> String {
    compare_reports(reports, designated).render()
}

//! Zero-shot task evaluation: task registry, scorers, and report aggregation.
//!
//! Scores are percentages with one decimal. Rounding is half away from zero
//! and averages are computed in integer tenths so that recomputing a printed
//! table gives the printed average back.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::str::FromStr;

use thiserror::Error;

use crate::generate::{answer, GenerationParams, Model};
use crate::tokenizer::Vocabulary;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unknown metric `{0}`")]
    UnknownMetric(String),
    #[error("reference `{0}` cannot be scored by this metric")]
    BadReference(String),
    #[error("unknown task id {0}")]
    UnknownTask(u8),
    #[error("task #{0} has no items")]
    EmptyTask(u8),
    #[error("duplicate task id {0}")]
    DuplicateTask(u8),
    #[error("no tasks to evaluate")]
    NoTasks,
}

/// The eight evaluated legal applications.
pub const TASK_NAMES: [&str; 8] = [
    "fact-based article prediction",
    "scene-based article prediction",
    "charge prediction",
    "prison term prediction without article",
    "prison term prediction with article",
    "case analysis",
    "criminal damages calculation",
    "consultation",
];

/// Task number `#1` to `#8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(u8);

impl TaskId {
    pub fn new(id: u8) -> Result<Self, EvalError> {
        if (1..=8).contains(&id) {
            Ok(Self(id))
        } else {
            Err(EvalError::UnknownTask(id))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        TASK_NAMES[self.0 as usize - 1]
    }

    /// Stand-in metric: numeric for prison terms and damages, exact match for
    /// consultation, choice otherwise.
    pub fn default_metric(self) -> Metric {
        match self.0 {
            1..=3 | 6 => Metric::Choice,
            4 | 5 | 7 => Metric::Numeric,
            _ => Metric::ExactMatch,
        }
    }

    pub fn all() -> impl Iterator<Item = TaskId> {
        (1..=8).map(TaskId)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    ExactMatch,
    Choice,
    Numeric,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::ExactMatch => "exact",
            Metric::Choice => "choice",
            Metric::Numeric => "numeric",
        }
    }
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exact" | "exact-match" => Ok(Metric::ExactMatch),
            "choice" => Ok(Metric::Choice),
            "numeric" => Ok(Metric::Numeric),
            other => Err(EvalError::UnknownMetric(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalItem {
    pub instruction: String,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalTask {
    pub id: TaskId,
    pub items: Vec<EvalItem>,
    pub metric: Metric,
}

impl EvalTask {
    pub fn name(&self) -> &'static str {
        self.id.name()
    }
}

/// Maps full-width ASCII variants and the ideographic space to ASCII, trims,
/// and collapses whitespace runs to one space.
pub fn normalize(text: &str) -> String {
    let mapped = text.chars().map(|c| match c {
        '\u{3000}' => ' ',
        '\u{FF01}'..='\u{FF5E}' => char::from_u32(c as u32 - 0xFEE0).unwrap_or(c),
        other => other,
    });
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in mapped {
        if c.is_whitespace() {
            pending_space = !out.is_empty();
        } else {
            if pending_space {
                out.push(' ');
                pending_space = false;
            }
            out.push(c);
        }
    }
    out
}

/// Option letters, e.g. `(A) ... (B) ...` or `A,B`, as a sorted set.
pub fn extract_choices(text: &str) -> Vec<char> {
    let norm = normalize(text);
    let chars: Vec<char> = norm.chars().collect();
    let mut found: Vec<char> = chars
        .windows(3)
        .filter(|w| w[0] == '(' && w[2] == ')' && w[1].is_ascii_uppercase())
        .map(|w| w[1])
        .collect();
    if found.is_empty() {
        let bare: Vec<char> = chars
            .iter()
            .copied()
            .filter(|c| !matches!(c, ',' | ';' | ' ' | '、' | '，' | '；'))
            .collect();
        if !bare.is_empty() && bare.iter().all(|c| c.is_ascii_uppercase()) {
            found = bare;
        } else {
            for (i, &c) in chars.iter().enumerate() {
                let isolated = |j: Option<&char>| j.is_none_or(|n| !n.is_ascii_alphanumeric());
                let before = if i == 0 { None } else { chars.get(i - 1) };
                if c.is_ascii_uppercase() && isolated(before) && isolated(chars.get(i + 1)) {
                    found.push(c);
                }
            }
        }
    }
    found.sort_unstable();
    found.dedup();
    found
}

/// First decimal number in the text, allowing thousands separators.
pub fn parse_number(text: &str) -> Option<f64> {
    let norm = normalize(text);
    let bytes = norm.as_bytes();
    let start = bytes.iter().position(|b| b.is_ascii_digit())?;
    let negative = start > 0 && bytes[start - 1] == b'-';
    let mut digits = String::new();
    let mut seen_dot = false;
    let mut i = start;
    while i < bytes.len() {
        let b = bytes[i];
        let next_digit = bytes.get(i + 1).is_some_and(u8::is_ascii_digit);
        match b {
            b'0'..=b'9' => digits.push(b as char),
            b',' if !seen_dot && next_digit => {}
            b'.' if !seen_dot && next_digit => {
                seen_dot = true;
                digits.push('.');
            }
            _ => break,
        }
        i += 1;
    }
    let value: f64 = digits.parse().ok()?;
    Some(if negative { -value } else { value })
}

/// Scores one prediction in `[0, 1]`.
pub fn score_item(prediction: &str, reference: &str, metric: Metric) -> Result<f64, EvalError> {
    let hit = match metric {
        Metric::ExactMatch => normalize(prediction) == normalize(reference),
        Metric::Choice => {
            let expected = extract_choices(reference);
            if expected.is_empty() {
                return Err(EvalError::BadReference(reference.into()));
            }
            extract_choices(prediction) == expected
        }
        Metric::Numeric => {
            let expected =
                parse_number(reference).ok_or_else(|| EvalError::BadReference(reference.into()))?;
            parse_number(prediction).is_some_and(|p| {
                p == expected || libm::fabs(p - expected) <= 1e-6 * libm::fabs(expected)
            })
        }
    };
    Ok(if hit { 1.0 } else { 0.0 })
}

/// Scores by metric name, as stored in fixture files.
pub fn score_item_named(prediction: &str, reference: &str, metric: &str) -> Result<f64, EvalError> {
    score_item(prediction, reference, metric.parse()?)
}

/// `x` in tenths, rounded half away from zero.
pub fn to_tenths(x: f64) -> i64 {
    let y = x * 10.0;
    // Absorb representation error so 16.65 * 10 = 166.4999... still rounds up.
    libm::round(y + libm::copysign(1e-9, y)) as i64
}

fn div_round_half_away(num: i64, den: i64) -> i64 {
    let q = (2 * num.abs() + den) / (2 * den);
    if num < 0 {
        -q
    } else {
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskScore {
    pub id: TaskId,
    /// Percentage in tenths (`174` is `17.4`).
    pub tenths: i64,
}

impl TaskScore {
    pub fn value(&self) -> f64 {
        self.tenths as f64 / 10.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalReport {
    pub model: String,
    pub scores: Vec<TaskScore>,
    pub average_tenths: i64,
}

impl EvalReport {
    /// Builds a report from percentages, rounding each to one decimal and
    /// averaging the rounded values.
    pub fn from_scores(model: impl Into<String>, scores: &[(TaskId, f64)]) -> Self {
        let scores: Vec<TaskScore> = scores
            .iter()
            .map(|&(id, s)| TaskScore {
                id,
                tenths: to_tenths(s),
            })
            .collect();
        let sum: i64 = scores.iter().map(|s| s.tenths).sum();
        let average_tenths = if scores.is_empty() {
            0
        } else {
            div_round_half_away(sum, scores.len() as i64)
        };
        Self {
            model: model.into(),
            scores,
            average_tenths,
        }
    }

    pub fn average(&self) -> f64 {
        self.average_tenths as f64 / 10.0
    }

    pub fn score(&self, id: TaskId) -> Option<f64> {
        self.scores.iter().find(|s| s.id == id).map(TaskScore::value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalOutcome {
    pub report: EvalReport,
    /// Items whose generation failed; each scored zero.
    pub failures: usize,
    /// Model responses, per task and item, in input order.
    pub predictions: Vec<Vec<String>>,
}

fn check_tasks(tasks: &[EvalTask]) -> Result<(), EvalError> {
    if tasks.is_empty() {
        return Err(EvalError::NoTasks);
    }
    let mut seen = [false; 9];
    for t in tasks {
        if t.items.is_empty() {
            return Err(EvalError::EmptyTask(t.id.0));
        }
        if core::mem::replace(&mut seen[t.id.0 as usize], true) {
            return Err(EvalError::DuplicateTask(t.id.0));
        }
    }
    Ok(())
}

/// Answers every item zero-shot, scores it, and aggregates per task.
///
/// A generation failure scores zero for that item and is logged; it never
/// aborts the run. A reference the metric cannot read is an error.
pub fn run_eval(
    model: Model<'_>,
    vocab: &Vocabulary,
    model_name: &str,
    tasks: &[EvalTask],
    gen: &GenerationParams,
) -> Result<EvalOutcome, EvalError> {
    check_tasks(tasks)?;
    let mut failures = 0;
    let mut scores = Vec::with_capacity(tasks.len());
    let mut predictions = Vec::with_capacity(tasks.len());
    for task in tasks {
        let mut total = 0.0;
        let mut task_predictions = Vec::with_capacity(task.items.len());
        for (n, item) in task.items.iter().enumerate() {
            let prediction = match answer(model, vocab, &item.instruction, gen) {
                Ok(p) => p,
                Err(e) => {
                    log::warn!("task {} item {n}: generation failed: {e}", task.id);
                    failures += 1;
                    task_predictions.push(String::new());
                    // Still validate the reference.
                    score_item("", &item.reference, task.metric)?;
                    continue;
                }
            };
            total += score_item(&prediction, &item.reference, task.metric)?;
            task_predictions.push(prediction);
        }
        scores.push((task.id, total / task.items.len() as f64 * 100.0));
        predictions.push(task_predictions);
    }
    Ok(EvalOutcome {
        report: EvalReport::from_scores(model_name, &scores),
        failures,
        predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub tenths: i64,
    pub bold: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonRow {
    pub model: String,
    pub cells: Vec<Option<Cell>>,
    pub average: Cell,
}

/// Side-by-side scores with the per-column best of a designated subset marked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonTable {
    pub columns: Vec<TaskId>,
    pub rows: Vec<ComparisonRow>,
}

/// Bolds, per column, every designated row that reaches the column maximum
/// among designated rows (ties all bold). An empty `designated` list means
/// every report is designated.
pub fn compare_reports(reports: &[EvalReport], designated: &[&str]) -> ComparisonTable {
    let mut columns: Vec<TaskId> = reports
        .iter()
        .flat_map(|r| r.scores.iter().map(|s| s.id))
        .collect();
    columns.sort_unstable();
    columns.dedup();
    let is_designated =
        |r: &EvalReport| designated.is_empty() || designated.contains(&r.model.as_str());

    let best = |f: &dyn Fn(&EvalReport) -> Option<i64>| {
        reports.iter().filter(|r| is_designated(r)).filter_map(f).max()
    };
    let col_best: Vec<Option<i64>> = columns
        .iter()
        .map(|&c| best(&|r| r.scores.iter().find(|s| s.id == c).map(|s| s.tenths)))
        .collect();
    let avg_best = best(&|r| Some(r.average_tenths));

    let rows = reports
        .iter()
        .map(|r| {
            let d = is_designated(r);
            let cells = columns
                .iter()
                .zip(&col_best)
                .map(|(&c, &b)| {
                    r.scores.iter().find(|s| s.id == c).map(|s| Cell {
                        tenths: s.tenths,
                        bold: d && Some(s.tenths) == b,
                    })
                })
                .collect();
            ComparisonRow {
                model: r.model.clone(),
                cells,
                average: Cell {
                    tenths: r.average_tenths,
                    bold: d && Some(r.average_tenths) == avg_best,
                },
            }
        })
        .collect();
    ComparisonTable { columns, rows }
}

fn format_tenths(tenths: i64) -> String {
    let sign = if tenths < 0 { "-" } else { "" };
    format!("{sign}{}.{}", tenths.abs() / 10, tenths.abs() % 10)
}

impl ComparisonTable {
    /// Column-aligned text; bold cells are wrapped in `**`.
    pub fn render(&self) -> String {
        let cell = |c: &Option<Cell>| match c {
            Some(c) if c.bold => format!("**{}**", format_tenths(c.tenths)),
            Some(c) => format_tenths(c.tenths),
            None => "-".to_string(),
        };
        let mut grid: Vec<Vec<String>> = Vec::with_capacity(self.rows.len() + 1);
        let mut header = alloc::vec!["Model".to_string()];
        header.extend(self.columns.iter().map(|c| c.to_string()));
        header.push("Avg.".into());
        grid.push(header);
        for row in &self.rows {
            let mut line = alloc::vec![row.model.clone()];
            line.extend(row.cells.iter().map(cell));
            line.push(cell(&Some(row.average)));
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|i| grid.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (n, line) in grid.iter().enumerate() {
            for (i, text) in line.iter().enumerate() {
                let pad = widths[i] - text.chars().count();
                if i == 0 {
                    let _ = write!(out, "{text}{:pad$}", "");
                } else {
                    let _ = write!(out, " | {:pad$}{text}", "");
                }
            }
            out.push('\n');
            if n == 0 {
                let total: usize = widths.iter().sum::<usize>() + 3 * (widths.len() - 1);
                out.push_str(&"-".repeat(total));
                out.push('\n');
            }
        }
        out
    }
}

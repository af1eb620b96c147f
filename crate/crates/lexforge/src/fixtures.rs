//! Evaluation task files: the dataset line format plus `reference`, `metric`
//! and `task` fields, one task per file.

use std::path::Path;

use lexforge_core::eval::{EvalItem, EvalTask, Metric, TaskId};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetFileError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureLine {
    pub instruction: String,
    pub output: String,
    pub subset: String,
    pub reference: String,
    pub metric: String,
    pub task: u8,
}

/// Bundled toy fixtures, in task order.
pub const BUNDLED: [(&str, &str); 8] = [
    ("task1.jsonl", include_str!("../fixtures/tasks/task1.jsonl")),
    ("task2.jsonl", include_str!("../fixtures/tasks/task2.jsonl")),
    ("task3.jsonl", include_str!("../fixtures/tasks/task3.jsonl")),
    ("task4.jsonl", include_str!("../fixtures/tasks/task4.jsonl")),
    ("task5.jsonl", include_str!("../fixtures/tasks/task5.jsonl")),
    ("task6.jsonl", include_str!("../fixtures/tasks/task6.jsonl")),
    ("task7.jsonl", include_str!("../fixtures/tasks/task7.jsonl")),
    ("task8.jsonl", include_str!("../fixtures/tasks/task8.jsonl")),
];

pub fn parse_task(text: &str) -> Result<EvalTask, DatasetFileError> {
    let mut task: Option<(TaskId, Metric)> = None;
    let mut items = Vec::new();
    let mut last_line = 0;
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        last_line = n + 1;
        let invalid = |msg: String| DatasetFileError::Invalid { line: n + 1, msg };
        let f: FixtureLine = serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
        let id = TaskId::new(f.task).map_err(|e| invalid(e.to_string()))?;
        let metric: Metric = f.metric.parse().map_err(|e: lexforge_core::eval::EvalError| invalid(e.to_string()))?;
        match task {
            None => task = Some((id, metric)),
            Some(t) if t == (id, metric) => {}
            Some(_) => return Err(invalid("all items of a file must share task and metric".into())),
        }
        if f.instruction.trim().is_empty() || f.reference.trim().is_empty() {
            return Err(invalid("instruction and reference must be non-empty".into()));
        }
        items.push(EvalItem {
            instruction: f.instruction,
            reference: f.reference,
        });
    }
    let (id, metric) = task.ok_or(DatasetFileError::Invalid {
        line: last_line,
        msg: "task file has no items".into(),
    })?;
    Ok(EvalTask { id, items, metric })
}

/// Every `*.jsonl` file in `dir`, sorted by task id.
pub fn load_dir(dir: &Path) -> Result<Vec<EvalTask>, DatasetFileError> {
    let entries = std::fs::read_dir(dir).map_err(|e| DatasetFileError::io(dir, e))?;
    let mut tasks = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| DatasetFileError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "jsonl") {
            let text = std::fs::read_to_string(&path).map_err(|e| DatasetFileError::io(&path, e))?;
            tasks.push(parse_task(&text)?);
        }
    }
    tasks.sort_by_key(|t| t.id);
    Ok(tasks)
}

pub fn bundled() -> Vec<EvalTask> {
    BUNDLED
        .iter()
        .map(|(name, text)| parse_task(text).unwrap_or_else(|e| panic!("bundled fixture {name}: {e}")))
        .collect()
}

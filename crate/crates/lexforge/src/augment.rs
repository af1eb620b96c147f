//! Offline augmentation round trip: rendered prompts go out as a batch file,
//! chat-model replies come back one JSON object per line and become subset
//! (c) records.

use lexforge_core::data::{render_augmentation_prompt, DataError};
use lexforge_core::{InstructionRecord, Subset};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AugmentError {
    #[error("no JSON object found in response")]
    ParseError,
    #[error("response object lacks a question/answer or instruction/output pair")]
    SchemaError,
    #[error("field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("batch file is malformed at byte {0}")]
    BatchFormat(usize),
}

/// Byte span of the first balanced `{...}` starting at or after `from`.
fn balanced_object(text: &str, from: usize) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    let start = from + text[from..].find('{')?;
    let (mut depth, mut in_str, mut escaped) = (0usize, false, false);
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some((start, i + 1));
                }
            }
            _ => {}
        }
    }
    None
}

/// The first substring that is a complete JSON object. Prose and code fences
/// around it are ignored.
fn first_object(text: &str) -> Option<Map<String, Value>> {
    let mut from = 0;
    while let Some(rel) = text[from..].find('{') {
        let at = from + rel;
        if let Some((s, e)) = balanced_object(text, at) {
            if let Ok(Value::Object(map)) = serde_json::from_str(&text[s..e]) {
                return Some(map);
            }
        }
        from = at + 1;
    }
    None
}

fn record_from_object(map: &Map<String, Value>) -> Result<InstructionRecord, AugmentError> {
    let pair = [("question", "answer"), ("instruction", "output")]
        .iter()
        .find_map(|&(q, a)| match (map.get(q), map.get(a)) {
            (Some(Value::String(q)), Some(Value::String(a))) => Some((q, a)),
            _ => None,
        })
        .ok_or(AugmentError::SchemaError)?;
    let record = InstructionRecord {
        instruction: pair.0.trim().to_string(),
        output: pair.1.trim().to_string(),
        subset: Subset::C,
    };
    record.validate().map_err(|e| match e {
        DataError::EmptyField(f) => AugmentError::EmptyField(f),
        _ => AugmentError::SchemaError,
    })?;
    Ok(record)
}

/// Extracts a refined record from a chat-model reply. Always returns a record
/// or a typed error.
pub fn parse_augmentation_response(text: &str) -> Result<InstructionRecord, AugmentError> {
    let map = first_object(text).ok_or(AugmentError::ParseError)?;
    record_from_object(&map)
}

/// Length-prefixed blocks: `<byte length>\n<prompt bytes>\n` per record.
pub fn prompt_batch(records: &[InstructionRecord]) -> Result<String, DataError> {
    let mut out = String::new();
    for r in records {
        let prompt = render_augmentation_prompt(r)?;
        out.push_str(&prompt.len().to_string());
        out.push('\n');
        out.push_str(&prompt);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_prompt_batch(text: &str) -> Result<Vec<String>, AugmentError> {
    let mut prompts = Vec::new();
    let mut pos = 0;
    while pos < text.len() {
        let nl = text[pos..].find('\n').ok_or(AugmentError::BatchFormat(pos))? + pos;
        let len: usize = text[pos..nl].parse().map_err(|_| AugmentError::BatchFormat(pos))?;
        let start = nl + 1;
        let end = start + len;
        if text.as_bytes().get(end) != Some(&b'\n') {
            return Err(AugmentError::BatchFormat(start));
        }
        let prompt = text.get(start..end).ok_or(AugmentError::BatchFormat(start))?;
        prompts.push(prompt.to_string());
        pos = end + 1;
    }
    Ok(prompts)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub records: Vec<InstructionRecord>,
    /// 1-based line number and reason for every rejected reply.
    pub failures: Vec<(usize, AugmentError)>,
}

/// One reply per non-empty line. A line holding an object with a string
/// `response` field is unwrapped first; otherwise the line itself is the
/// reply.
pub fn ingest_responses(text: &str) -> IngestReport {
    let mut report = IngestReport::default();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let wrapped = match serde_json::from_str::<Value>(line) {
            Ok(Value::Object(m)) => match m.get("response") {
                Some(Value::String(s)) => Some(s.clone()),
                _ => None,
            },
            _ => None,
        };
        let reply = wrapped.as_deref().unwrap_or(line);
        match parse_augmentation_response(reply) {
            Ok(r) => report.records.push(r),
            Err(e) => report.failures.push((n + 1, e)),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(q: &str, a: &str) -> InstructionRecord {
        InstructionRecord::new(q, a, Subset::C).unwrap()
    }

    #[test]
    fn direct_mapping() {
        let r = parse_augmentation_response(r#"{"question":"请问Q","answer":"A。"}"#).unwrap();
        assert_eq!(r, rec("请问Q", "A。"));
        let r = parse_augmentation_response(r#"{"instruction":"I","output":"O"}"#).unwrap();
        assert_eq!(r, rec("I", "O"));
    }

    #[test]
    fn prose_and_fences_are_stripped() {
        let expected = rec("请问Q", "A。");
        for text in [
            "```json\n{\"question\":\"请问Q\",\"answer\":\"A。\"}\n```",
            "好的，结果如下：\n{\"question\": \"请问Q\", \"answer\": \"A。\"}\n希望有帮助。",
            "{not json} then {\"question\":\"请问Q\",\"answer\":\"A。\"}",
            "```\n{\"question\":\"请问Q\",\"answer\":\"A。\",\"note\":{\"x\":\"}\"}}\n```",
        ] {
            assert_eq!(parse_augmentation_response(text).unwrap(), expected, "{text}");
        }
    }

    #[test]
    fn typed_errors() {
        assert_eq!(parse_augmentation_response("no object"), Err(AugmentError::ParseError));
        assert_eq!(parse_augmentation_response("{\"question\": "), Err(AugmentError::ParseError));
        assert_eq!(parse_augmentation_response(r#"{"question":""}"#), Err(AugmentError::SchemaError));
        assert_eq!(parse_augmentation_response(r#"{"question":"q","answer":3}"#), Err(AugmentError::SchemaError));
        assert_eq!(
            parse_augmentation_response(r#"{"question":"q","answer":"  "}"#),
            Err(AugmentError::EmptyField("output"))
        );
    }

    #[test]
    fn batch_round_trip() {
        let records = vec![rec("第一\n问", "答"), rec("Q2", "A2")];
        let text = prompt_batch(&records).unwrap();
        let prompts = parse_prompt_batch(&text).unwrap();
        assert_eq!(prompts.len(), 2);
        assert_eq!(prompts[0], render_augmentation_prompt(&records[0]).unwrap());
        assert!(parse_prompt_batch("5\nabc\n").is_err());
        assert!(parse_prompt_batch("x\n").is_err());
    }

    #[test]
    fn ingest_counts_failures() {
        let text = "{\"question\":\"q1\",\"answer\":\"a1\"}\n\n{\"response\":\"```{\\\"question\\\":\\\"q2\\\",\\\"answer\\\":\\\"a2\\\"}```\"}\nnothing here\n";
        let report = ingest_responses(text);
        assert_eq!(report.records, vec![rec("q1", "a1"), rec("q2", "a2")]);
        assert_eq!(report.failures, vec![(4, AugmentError::ParseError)]);
    }
}

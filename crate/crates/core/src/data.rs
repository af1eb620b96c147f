//! Prompt templates, instruction records and conversion to training examples.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use hashbrown::HashSet;
use thiserror::Error;

use crate::tokenizer::{TokenSequence, Vocabulary};
use crate::train::TrainExample;

/// Everything before the instruction in the Alpaca wrapper.
pub const ALPACA_HEADER: &str = "Below is an instruction that describes a task. Write a response that appropriately completes the request.\n\n### Instruction:\n";
/// Everything between the instruction and the response. Note the space
/// before the final newline.
pub const ALPACA_RESPONSE_MARKER: &str = "\n\n### Response: \n";

const AUGMENT_HEAD: &str = "我希望你担任语言专家的角色。我会给你一段与法律问答文本，请你使用正式的文风润色它。要求：\n\
1. 修正语法错误、标点符号错误，去掉特殊符号，必须使语句更通顺。\n\
2. 使逻辑更清晰、格式更规范，比如向<answer>中换行符。\n\
3. 使更礼貌，比如向<question>中加入“请问”等礼貌用语。\n\
4. 不要写任何解释性语句。\n\
5. <question>应该是问题，<answer>应该是答案。\n\
这段对话是：\n<question>:";
const AUGMENT_MID: &str = " \n<answer>:";
const AUGMENT_TAIL: &str = " \n\n以JSON格式返回结果：";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DataError {
    #[error("field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("no valid records")]
    NoData,
    #[error("example has {len} tokens, more than the context length {max}")]
    TooLong { len: usize, max: usize },
    #[error("unknown subset `{0}`")]
    UnknownSubset(String),
}

/// Source subset of an instruction record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Subset {
    /// Crime-consultation question/answer pairs.
    A,
    /// Legal exam questions.
    B,
    /// Refined rewrites of (a) and (b).
    C,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::A, Subset::B, Subset::C];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::A => "a",
            Subset::B => "b",
            Subset::C => "c",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" => Ok(Subset::A),
            "b" => Ok(Subset::B),
            "c" => Ok(Subset::C),
            other => Err(DataError::UnknownSubset(other.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstructionRecord {
    pub instruction: String,
    pub output: String,
    pub subset: Subset,
}

impl InstructionRecord {
    pub fn new(
        instruction: impl Into<String>,
        output: impl Into<String>,
        subset: Subset,
    ) -> Result<Self, DataError> {
        let record = Self {
            instruction: instruction.into(),
            output: output.into(),
            subset,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.instruction.trim().is_empty() {
            return Err(DataError::EmptyField("instruction"));
        }
        if self.output.trim().is_empty() {
            return Err(DataError::EmptyField("output"));
        }
        Ok(())
    }
}

/// A training rendering and the byte offset where the response begins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedText {
    pub text: String,
    pub boundary: usize,
}

impl RenderedText {
    pub fn prompt(&self) -> &str {
        &self.text[..self.boundary]
    }

    pub fn response(&self) -> &str {
        &self.text[self.boundary..]
    }
}

fn non_empty(value: &str, field: &'static str) -> Result<(), DataError> {
    if value.trim().is_empty() {
        Err(DataError::EmptyField(field))
    } else {
        Ok(())
    }
}

/// Inference wrapper: the Alpaca template cut after `### Response: \n`.
pub fn render_test(instruction: &str) -> Result<String, DataError> {
    non_empty(instruction, "instruction")?;
    let mut s = String::with_capacity(
        ALPACA_HEADER.len() + instruction.len() + ALPACA_RESPONSE_MARKER.len(),
    );
    s.push_str(ALPACA_HEADER);
    s.push_str(instruction);
    s.push_str(ALPACA_RESPONSE_MARKER);
    Ok(s)
}

/// Training wrapper: the inference prompt followed directly by the output.
pub fn render_train(instruction: &str, output: &str) -> Result<RenderedText, DataError> {
    non_empty(output, "output")?;
    let mut text = render_test(instruction)?;
    let boundary = text.len();
    text.push_str(output);
    Ok(RenderedText { text, boundary })
}

/// Prompt asking an external chat model to polish a question/answer pair.
pub fn render_augmentation_prompt(record: &InstructionRecord) -> Result<String, DataError> {
    record.validate()?;
    let mut s = String::new();
    s.push_str(AUGMENT_HEAD);
    s.push_str(&record.instruction);
    s.push_str(AUGMENT_MID);
    s.push_str(&record.output);
    s.push_str(AUGMENT_TAIL);
    Ok(s)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetReport {
    /// Accepted records per subset, in `a, b, c` order.
    pub counts: [usize; 3],
    pub rejected: usize,
    pub duplicates: usize,
}

impl DatasetReport {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count(&self, subset: Subset) -> usize {
        self.counts[subset.index()]
    }

    pub fn proportion(&self, subset: Subset) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.count(subset) as f64 / total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<InstructionRecord>,
    pub report: DatasetReport,
}

/// Validates, deduplicates exact `(instruction, output)` pairs (first one
/// wins) and counts records per subset. Input order is preserved.
pub fn build_dataset(
    sources: impl IntoIterator<Item = InstructionRecord>,
) -> Result<Dataset, DataError> {
    let records: Vec<InstructionRecord> = sources.into_iter().collect();
    let mut report = DatasetReport::default();
    let mut keep = alloc::vec![false; records.len()];
    {
        let mut seen: HashSet<(&str, &str)> = HashSet::with_capacity(records.len());
        for (k, r) in keep.iter_mut().zip(&records) {
            if r.validate().is_err() {
                report.rejected += 1;
            } else if !seen.insert((&r.instruction, &r.output)) {
                report.duplicates += 1;
            } else {
                report.counts[r.subset.index()] += 1;
                *k = true;
            }
        }
    }
    let records: Vec<InstructionRecord> = records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect();
    if records.is_empty() {
        return Err(DataError::NoData);
    }
    Ok(Dataset { records, report })
}

/// `[BOS] + encode(prompt) + encode(output) + [EOS]`, with the output
/// positions and EOS as the loss set. Prompt and output are encoded
/// separately so no merge crosses the boundary.
pub fn tokenize_example(
    record: &InstructionRecord,
    vocab: &Vocabulary,
    context_length: usize,
) -> Result<TrainExample, DataError> {
    record.validate()?;
    let prompt = vocab.encode(&render_test(&record.instruction)?);
    let output = vocab.encode(&record.output);
    let len = 1 + prompt.len() + output.len() + 1;
    if len > context_length {
        return Err(DataError::TooLong {
            len,
            max: context_length,
        });
    }
    let mut tokens = TokenSequence::new(Vec::with_capacity(len));
    tokens.push(vocab.bos());
    tokens.extend_from_slice(&prompt);
    tokens.extend_from_slice(&output);
    tokens.push(vocab.eos());
    let start = 1 + prompt.len();
    Ok(TrainExample {
        tokens,
        output_index_set: (start..len).collect(),
    })
}

//! Vocabulary file: a `bpe-v1` line, a `size N` line, then one `left right`
//! merge per line in rank order.

use std::fmt::Write as _;
use std::path::Path;

use lexforge_core::tokenizer::TokenizerError;
use lexforge_core::Vocabulary;
use thiserror::Error;

const MAGIC: &str = "bpe-v1";

#[derive(Debug, Error)]
pub enum VocabFileError {
    #[error("cannot read or write vocabulary file: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported vocabulary format `{0}`")]
    Version(String),
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

pub fn to_text(vocab: &Vocabulary) -> String {
    let mut out = format!("{MAGIC}\nsize {}\n", vocab.size());
    for (l, r) in vocab.merges() {
        let _ = writeln!(out, "{l} {r}");
    }
    out
}

pub fn from_text(text: &str) -> Result<Vocabulary, VocabFileError> {
    let mut lines = text.lines().enumerate();
    let malformed = |line: usize, msg: &str| VocabFileError::Malformed {
        line: line + 1,
        msg: msg.into(),
    };
    match lines.next() {
        Some((_, MAGIC)) => {}
        Some((_, other)) => return Err(VocabFileError::Version(other.into())),
        None => return Err(malformed(0, "empty file")),
    }
    let (n, size_line) = lines.next().ok_or_else(|| malformed(1, "missing size line"))?;
    let declared: usize = size_line
        .strip_prefix("size ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| malformed(n, "expected `size N`"))?;
    let mut merges = Vec::new();
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let pair = match (parts.next(), parts.next(), parts.next()) {
            (Some(l), Some(r), None) => l.parse().ok().zip(r.parse().ok()),
            _ => None,
        };
        merges.push(pair.ok_or_else(|| malformed(n, "expected `left right`"))?);
    }
    let vocab = Vocabulary::from_merges(merges)?;
    if vocab.size() != declared {
        return Err(TokenizerError::SizeMismatch {
            declared,
            merges: vocab.merges().len(),
        }
        .into());
    }
    Ok(vocab)
}

pub fn save(vocab: &Vocabulary, path: &Path) -> Result<(), VocabFileError> {
    std::fs::write(path, to_text(vocab))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vocabulary, VocabFileError> {
    from_text(&std::fs::read_to_string(path)?)
}

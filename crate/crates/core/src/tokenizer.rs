//! Byte-level BPE.
//!
//! The base alphabet is the 256 byte values; merges are learned greedily over
//! whole documents (no pre-splitting) and the three special tokens are placed
//! after the last merge in the order BOS, EOS, PAD.

use alloc::collections::BinaryHeap;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::ops::Deref;

use hashbrown::HashMap;
use thiserror::Error;

/// Number of byte-level atoms.
pub const BYTE_ATOMS: usize = 256;
/// Number of special tokens appended after the merges.
pub const SPECIAL_COUNT: usize = 3;
/// Smallest legal target size: bytes plus specials, no merges.
pub const MIN_VOCAB_SIZE: usize = BYTE_ATOMS + SPECIAL_COUNT;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizerError {
    #[error("corpus is empty")]
    CorpusEmpty,
    #[error("target vocabulary size {0} is below the minimum of {MIN_VOCAB_SIZE}")]
    VocabTooSmall(usize),
    #[error("corpus ran out of pairs after {learned} of {requested} merges")]
    MergesExhausted { learned: usize, requested: usize },
    #[error("token id {id} is outside the vocabulary of size {size}")]
    UnknownToken { id: u32, size: usize },
    #[error("merge {index} references undefined id ({left}, {right})")]
    InvalidMerge { index: usize, left: u32, right: u32 },
    #[error("vocabulary declares size {declared} but has {merges} merges")]
    SizeMismatch { declared: usize, merges: usize },
}

/// An ordered list of vocabulary indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn push(&mut self, id: u32) {
        self.0.push(id);
    }

    pub fn extend_from_slice(&mut self, ids: &[u32]) {
        self.0.extend_from_slice(ids);
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }
}

impl Deref for TokenSequence {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        Self(ids)
    }
}

/// A trained byte-level BPE vocabulary. Immutable once built.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    expansions: Vec<Vec<u8>>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.merges == other.merges
    }
}

impl Eq for Vocabulary {}

impl Vocabulary {
    /// Rebuilds a vocabulary from a merge list, checking that each merge only
    /// refers to ids defined before it.
    pub fn from_merges(merges: Vec<(u32, u32)>) -> Result<Self, TokenizerError> {
        let mut expansions: Vec<Vec<u8>> = (0..=255u8).map(|b| alloc::vec![b]).collect();
        let mut ranks = HashMap::with_capacity(merges.len());
        for (index, &(left, right)) in merges.iter().enumerate() {
            let defined = (BYTE_ATOMS + index) as u32;
            if left >= defined || right >= defined {
                return Err(TokenizerError::InvalidMerge { index, left, right });
            }
            let mut bytes = expansions[left as usize].clone();
            bytes.extend_from_slice(&expansions[right as usize]);
            expansions.push(bytes);
            ranks.insert((left, right), index as u32);
        }
        Ok(Self {
            merges,
            ranks,
            expansions,
        })
    }

    /// Like [`Vocabulary::from_merges`] but also checks the declared total size.
    pub fn with_target_size(
        target_size: usize,
        merges: Vec<(u32, u32)>,
    ) -> Result<Self, TokenizerError> {
        if target_size < MIN_VOCAB_SIZE {
            return Err(TokenizerError::VocabTooSmall(target_size));
        }
        if target_size - MIN_VOCAB_SIZE != merges.len() {
            return Err(TokenizerError::SizeMismatch {
                declared: target_size,
                merges: merges.len(),
            });
        }
        Self::from_merges(merges)
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Total number of ids, specials included.
    pub fn size(&self) -> usize {
        BYTE_ATOMS + self.merges.len() + SPECIAL_COUNT
    }

    pub fn bos(&self) -> u32 {
        (BYTE_ATOMS + self.merges.len()) as u32
    }

    pub fn eos(&self) -> u32 {
        self.bos() + 1
    }

    pub fn pad(&self) -> u32 {
        self.bos() + 2
    }

    pub fn is_special(&self, id: u32) -> bool {
        id >= self.bos() && (id as usize) < self.size()
    }

    /// Encodes UTF-8 text by applying merges in training order. Never emits
    /// special ids.
    pub fn encode(&self, text: &str) -> TokenSequence {
        const NONE: usize = usize::MAX;

        let mut ids: Vec<u32> = text.bytes().map(u32::from).collect();
        let n = ids.len();
        if n < 2 || self.merges.is_empty() {
            return TokenSequence(ids);
        }

        let mut next: Vec<usize> = (1..=n).map(|i| if i == n { NONE } else { i }).collect();
        let mut prev: Vec<usize> = (0..n).map(|i| if i == 0 { NONE } else { i - 1 }).collect();
        let mut alive = alloc::vec![true; n];

        // Entries are (rank, position); equal ranks pop leftmost first, which
        // reproduces the left-to-right non-overlapping application used in
        // training. Stale entries are skipped on pop.
        let mut heap = BinaryHeap::new();
        for i in 0..n - 1 {
            if let Some(&rank) = self.ranks.get(&(ids[i], ids[i + 1])) {
                heap.push(Reverse((rank, i)));
            }
        }

        while let Some(Reverse((rank, pos))) = heap.pop() {
            if !alive[pos] {
                continue;
            }
            let right = next[pos];
            if right == NONE || self.ranks.get(&(ids[pos], ids[right])) != Some(&rank) {
                continue;
            }
            ids[pos] = (BYTE_ATOMS as u32) + rank;
            alive[right] = false;
            next[pos] = next[right];
            if next[right] != NONE {
                prev[next[right]] = pos;
            }
            let before = prev[pos];
            if before != NONE {
                if let Some(&r) = self.ranks.get(&(ids[before], ids[pos])) {
                    heap.push(Reverse((r, before)));
                }
            }
            let after = next[pos];
            if after != NONE {
                if let Some(&r) = self.ranks.get(&(ids[pos], ids[after])) {
                    heap.push(Reverse((r, pos)));
                }
            }
        }

        let mut out = Vec::new();
        let mut cursor = 0;
        while cursor != NONE {
            out.push(ids[cursor]);
            cursor = next[cursor];
        }
        TokenSequence(out)
    }

    /// Concatenates the byte expansion of every id. Specials expand to nothing
    /// and invalid UTF-8 is replaced with U+FFFD.
    pub fn decode(&self, tokens: &[u32]) -> Result<String, TokenizerError> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(tokens)?).into_owned())
    }

    pub fn decode_bytes(&self, tokens: &[u32]) -> Result<Vec<u8>, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in tokens {
            if (id as usize) >= self.size() {
                return Err(TokenizerError::UnknownToken {
                    id,
                    size: self.size(),
                });
            }
            if let Some(expansion) = self.expansions.get(id as usize) {
                bytes.extend_from_slice(expansion);
            }
        }
        Ok(bytes)
    }
}

fn add_pairs(doc: &[u32], counts: &mut HashMap<(u32, u32), i64>, sign: i64) {
    for w in doc.windows(2) {
        let entry = counts.entry((w[0], w[1])).or_insert(0);
        *entry += sign;
        if *entry == 0 {
            counts.remove(&(w[0], w[1]));
        }
    }
}

fn contains_pair(doc: &[u32], pair: (u32, u32)) -> bool {
    doc.windows(2).any(|w| w[0] == pair.0 && w[1] == pair.1)
}

fn merge_in_place(doc: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut write = 0;
    let mut read = 0;
    while read < doc.len() {
        if read + 1 < doc.len() && doc[read] == pair.0 && doc[read + 1] == pair.1 {
            doc[write] = new_id;
            read += 2;
        } else {
            doc[write] = doc[read];
            read += 1;
        }
        write += 1;
    }
    doc.truncate(write);
}

/// Learns `target_size - 259` merges by repeatedly merging the most frequent
/// adjacent pair. Ties go to the lexicographically smallest `(left, right)`.
pub fn train_bpe<S: AsRef<str>>(
    corpus: &[S],
    target_size: usize,
) -> Result<Vocabulary, TokenizerError> {
    if corpus.is_empty() {
        return Err(TokenizerError::CorpusEmpty);
    }
    if target_size < MIN_VOCAB_SIZE {
        return Err(TokenizerError::VocabTooSmall(target_size));
    }
    let requested = target_size - MIN_VOCAB_SIZE;

    let mut docs: Vec<Vec<u32>> = corpus
        .iter()
        .map(|d| d.as_ref().bytes().map(u32::from).collect())
        .collect();
    let mut counts: HashMap<(u32, u32), i64> = HashMap::new();
    for doc in &docs {
        add_pairs(doc, &mut counts, 1);
    }

    let mut merges = Vec::with_capacity(requested);
    while merges.len() < requested {
        let best = counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|(&p, _)| p);
        let Some(pair) = best else {
            return Err(TokenizerError::MergesExhausted {
                learned: merges.len(),
                requested,
            });
        };
        let new_id = (BYTE_ATOMS + merges.len()) as u32;
        for doc in docs.iter_mut() {
            if !contains_pair(doc, pair) {
                continue;
            }
            add_pairs(doc, &mut counts, -1);
            merge_in_place(doc, pair, new_id);
            add_pairs(doc, &mut counts, 1);
        }
        merges.push(pair);
    }

    Vocabulary::from_merges(merges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    // Brute-force oracle: count every adjacent byte pair.
    fn most_frequent_pair(corpus: &[&str]) -> (u32, u32) {
        let mut best: Option<((u32, u32), usize)> = None;
        for a in 0..256u32 {
            for b in 0..256u32 {
                let count: usize = corpus
                    .iter()
                    .map(|d| {
                        d.as_bytes()
                            .windows(2)
                            .filter(|w| w[0] as u32 == a && w[1] as u32 == b)
                            .count()
                    })
                    .sum();
                if count > 0 && best.is_none_or(|(_, c)| count > c) {
                    best = Some(((a, b), count));
                }
            }
        }
        best.unwrap().0
    }

    #[test]
    fn single_merge_on_repeated_byte() {
        let corpus = ["aaaa"];
        let vocab = train_bpe(&corpus, 260).unwrap();
        assert_eq!(vocab.merges(), &[most_frequent_pair(&corpus)]);
        assert_eq!(vocab.merges(), &[(97, 97)]);
        assert_eq!(vocab.size(), 260);
        assert_eq!(vocab.encode("aaaa").ids(), &[256, 256]);
    }

    #[test]
    fn first_merge_matches_brute_force() {
        let corpus = ["the cat sat on the mat", "that hat", "中华人民共和国"];
        let vocab = train_bpe(&corpus, 262).unwrap();
        assert_eq!(vocab.merges()[0], most_frequent_pair(&corpus));
    }

    #[test]
    fn ties_break_on_smallest_pair() {
        // "ab" and "cd" both occur once; (97, 98) < (99, 100).
        let vocab = train_bpe(&["ab", "cd"], 260).unwrap();
        assert_eq!(vocab.merges(), &[(97, 98)]);
    }

    #[test]
    fn errors() {
        let empty: [&str; 0] = [];
        assert_eq!(train_bpe(&empty, 300), Err(TokenizerError::CorpusEmpty));
        assert_eq!(train_bpe(&["ab"], 258), Err(TokenizerError::VocabTooSmall(258)));
        assert!(matches!(
            train_bpe(&["a"], 260),
            Err(TokenizerError::MergesExhausted { learned: 0, requested: 1 })
        ));
    }

    #[test]
    fn zero_merge_budget() {
        let vocab = train_bpe(&["ab"], 259).unwrap();
        assert!(vocab.merges().is_empty());
        assert_eq!(vocab.size(), 259);
        assert_eq!((vocab.bos(), vocab.eos(), vocab.pad()), (256, 257, 258));
    }

    #[test]
    fn decode_edge_cases() {
        let vocab = train_bpe(&["中华人民共和国 中华人民共和国"], 280).unwrap();
        assert_eq!(vocab.encode("").ids(), &[] as &[u32]);
        assert_eq!(vocab.decode(&[]).unwrap(), "");
        assert_eq!(vocab.decode(&[vocab.bos(), vocab.eos()]).unwrap(), "");
        let text = "中华人民共和国";
        assert_eq!(vocab.decode(&vocab.encode(text)).unwrap(), text);
        assert!(vocab.encode(text).len() < text.len());
        assert_eq!(
            vocab.decode(&[280]),
            Err(TokenizerError::UnknownToken { id: 280, size: 280 })
        );
        // A lone continuation byte is replaced, not rejected.
        assert_eq!(vocab.decode(&[0x80]).unwrap(), "\u{FFFD}");
    }

    #[test]
    fn encode_never_emits_specials() {
        let vocab = train_bpe(&["abababab cdcd"], 262).unwrap();
        let ids = vocab.encode("abababab cdcd ab");
        assert!(ids.iter().all(|&id| !vocab.is_special(id)));
    }

    #[test]
    fn from_merges_rejects_forward_reference() {
        assert_eq!(
            Vocabulary::from_merges(vec![(256, 97)]).unwrap_err(),
            TokenizerError::InvalidMerge {
                index: 0,
                left: 256,
                right: 97
            }
        );
        assert!(Vocabulary::with_target_size(261, vec![(97, 97)]).is_err());
    }

    #[test]
    fn overlapping_runs_merge_left_to_right() {
        let vocab = Vocabulary::from_merges(vec![(97, 97)]).unwrap();
        assert_eq!(vocab.encode("aaa").ids(), &[256, 97]);
        assert_eq!(vocab.decode(&vocab.encode("aaaaa")).unwrap(), "aaaaa".to_string());
    }

    proptest::proptest! {
        #[test]
        fn round_trip(text in "\\PC{0,64}") {
            let vocab = train_bpe(&["法院 立案 the court 起诉的当日 法院就会立案的"], 300).unwrap();
            proptest::prop_assert_eq!(vocab.decode(&vocab.encode(&text)).unwrap(), text);
        }

        #[test]
        fn encode_matches_sequential_merges(text in "[ab ]{0,40}") {
            let vocab = train_bpe(&["abab ab aabb ba bab", "aab abba"], 270).unwrap();
            // Oracle: apply each merge across the whole sequence in training order.
            let mut ids: Vec<u32> = text.bytes().map(u32::from).collect();
            for (rank, &pair) in vocab.merges().iter().enumerate() {
                merge_in_place(&mut ids, pair, (BYTE_ATOMS + rank) as u32);
            }
            let encoded = vocab.encode(&text);
            proptest::prop_assert_eq!(encoded.ids(), &ids[..]);
        }
    }
}

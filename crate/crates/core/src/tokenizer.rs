//! Byte-level BPE with a fixed block of special tokens.
//!
//! Ids `0..7` are the special tokens, `7..263` the 256 byte values, and
//! every merge learned during training appends one id after that. Merges
//! never cross pre-token boundaries: a pre-token is an optional single
//! leading space followed by a run of alphanumerics or a run of other
//! non-space characters; remaining whitespace forms its own pre-tokens.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const ENT: u32 = 3;
pub const TRIPLE: u32 = 4;
pub const SEP: u32 = 5;
pub const UNK: u32 = 6;

pub const SPECIAL_TOKENS: [&str; 7] = [
    "[PAD]", "[BOS]", "[EOS]", "[ENT]", "[TRIPLE]", "[SEP]", "[UNK]",
];
pub const BYTE_OFFSET: u32 = SPECIAL_TOKENS.len() as u32;
/// Size of the vocabulary before any merge.
pub const BASE_VOCAB: usize = SPECIAL_TOKENS.len() + 256;
pub const DEFAULT_VOCAB_SIZE: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizerError {
    #[error("vocab size {requested} must exceed the {base} base symbols")]
    VocabTooSmall { requested: usize, base: usize },
    #[error("token id {0} is outside the vocabulary")]
    InvalidId(u32),
    #[error("malformed merge #{index}: ({left}, {right})")]
    BadMerge { index: usize, left: u32, right: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    merges: Vec<(u32, u32)>,
    tokens: Vec<Vec<u8>>,
    ranks: BTreeMap<(u32, u32), u32>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Space,
    Word,
    Other,
}

fn class_of(c: char) -> CharClass {
    if c.is_whitespace() {
        CharClass::Space
    } else if c.is_alphanumeric() {
        CharClass::Word
    } else {
        CharClass::Other
    }
}

/// Splits text into the units BPE merges may not cross. Concatenating the
/// pieces gives back the input.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |k: usize| {
        if k < chars.len() {
            chars[k].0
        } else {
            text.len()
        }
    };
    let run_end = |from: usize, class: CharClass| {
        let mut k = from;
        while k < chars.len() && class_of(chars[k].1) == class {
            k += 1;
        }
        k
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let class = class_of(chars[i].1);
        if class != CharClass::Space {
            let k = run_end(i, class);
            out.push(&text[chars[i].0..end_of(k)]);
            i = k;
            continue;
        }
        let j = run_end(i, CharClass::Space);
        if j < chars.len() && chars[j - 1].1 == ' ' {
            if j - 1 > i {
                out.push(&text[chars[i].0..chars[j - 1].0]);
            }
            let k = run_end(j, class_of(chars[j].1));
            out.push(&text[chars[j - 1].0..end_of(k)]);
            i = k;
        } else {
            out.push(&text[chars[i].0..end_of(j)]);
            i = j;
        }
    }
    out
}

fn byte_symbols(piece: &str) -> Vec<u32> {
    piece.bytes().map(|b| BYTE_OFFSET + b as u32).collect()
}

fn merge_in_place(symbols: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == pair.0 && symbols[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    *symbols = out;
}

impl SubwordVocab {
    /// Vocabulary with no merges: specials plus raw bytes.
    pub fn bytes_only() -> Self {
        let mut tokens: Vec<Vec<u8>> = SPECIAL_TOKENS
            .iter()
            .map(|s| s.as_bytes().to_vec())
            .collect();
        tokens.extend((0..=255u8).map(|b| alloc::vec![b]));
        Self {
            merges: Vec::new(),
            tokens,
            ranks: BTreeMap::new(),
        }
    }

    /// Rebuilds a vocabulary from its merge list.
    pub fn from_merges(merges: &[(u32, u32)]) -> Result<Self, TokenizerError> {
        let mut v = Self::bytes_only();
        for (index, &(left, right)) in merges.iter().enumerate() {
            let valid = |id: u32| id >= BYTE_OFFSET && (id as usize) < v.tokens.len();
            if !valid(left) || !valid(right) || v.ranks.contains_key(&(left, right)) {
                return Err(TokenizerError::BadMerge { index, left, right });
            }
            v.add_merge((left, right));
        }
        Ok(v)
    }

    fn add_merge(&mut self, pair: (u32, u32)) -> u32 {
        let id = self.tokens.len() as u32;
        let mut bytes = self.tokens[pair.0 as usize].clone();
        bytes.extend_from_slice(&self.tokens[pair.1 as usize]);
        self.tokens.push(bytes);
        self.ranks.insert(pair, id);
        self.merges.push(pair);
        id
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(Vec::as_slice)
    }

    pub fn is_special(id: u32) -> bool {
        id < BYTE_OFFSET
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for piece in pre_tokenize(text) {
            out.extend(self.encode_piece(piece));
        }
        out
    }

    fn encode_piece(&self, piece: &str) -> Vec<u32> {
        let mut symbols = byte_symbols(piece);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&id| (id, (w[0], w[1]))))
                .min();
            match best {
                Some((id, pair)) => merge_in_place(&mut symbols, pair, id),
                None => return symbols,
            }
        }
    }

    /// Concatenated bytes of `ids`, with special tokens rendering as nothing.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            let tok = self
                .tokens
                .get(id as usize)
                .ok_or(TokenizerError::InvalidId(id))?;
            if !Self::is_special(id) {
                bytes.extend_from_slice(tok);
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }
}

struct PairStats {
    counts: BTreeMap<(u32, u32), u64>,
    holders: BTreeMap<(u32, u32), BTreeSet<usize>>,
}

impl PairStats {
    fn add_word(&mut self, idx: usize, symbols: &[u32], weight: u64) {
        for w in symbols.windows(2) {
            *self.counts.entry((w[0], w[1])).or_insert(0) += weight;
            self.holders.entry((w[0], w[1])).or_default().insert(idx);
        }
    }

    fn remove_word(&mut self, symbols: &[u32], weight: u64) {
        for w in symbols.windows(2) {
            let key = (w[0], w[1]);
            if let Some(c) = self.counts.get_mut(&key) {
                *c -= weight;
                if *c == 0 {
                    self.counts.remove(&key);
                }
            }
        }
    }
}

/// Learns merges greedily by pair frequency until `vocab_size` ids exist or
/// no pair occurs at least twice. Ties go to the lexicographically smallest
/// `(left bytes, right bytes)`.
pub fn train_bpe<S: AsRef<str>>(
    texts: &[S],
    vocab_size: usize,
) -> Result<SubwordVocab, TokenizerError> {
    if vocab_size <= BASE_VOCAB {
        return Err(TokenizerError::VocabTooSmall {
            requested: vocab_size,
            base: BASE_VOCAB,
        });
    }
    let mut piece_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for t in texts {
        for piece in pre_tokenize(t.as_ref()) {
            *piece_counts.entry(piece).or_insert(0) += 1;
        }
    }
    let mut words: Vec<(Vec<u32>, u64)> = piece_counts
        .into_iter()
        .map(|(p, c)| (byte_symbols(p), c))
        .collect();
    let mut stats = PairStats {
        counts: BTreeMap::new(),
        holders: BTreeMap::new(),
    };
    for (i, (symbols, c)) in words.iter().enumerate() {
        stats.add_word(i, symbols, *c);
    }

    let mut vocab = SubwordVocab::bytes_only();
    while vocab.len() < vocab_size {
        let mut best: Option<((u32, u32), u64)> = None;
        for (&pair, &count) in &stats.counts {
            let better = match best {
                None => true,
                Some((bp, bc)) => {
                    count > bc
                        || (count == bc
                            && (
                                vocab.tokens[pair.0 as usize].as_slice(),
                                vocab.tokens[pair.1 as usize].as_slice(),
                            ) < (
                                vocab.tokens[bp.0 as usize].as_slice(),
                                vocab.tokens[bp.1 as usize].as_slice(),
                            ))
                }
            };
            if better {
                best = Some((pair, count));
            }
        }
        let Some((pair, count)) = best else { break };
        if count < 2 {
            break;
        }
        let new_id = vocab.add_merge(pair);
        let affected = stats.holders.remove(&pair).unwrap_or_default();
        for idx in affected {
            let (symbols, weight) = &mut words[idx];
            if !symbols.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            stats.remove_word(symbols, *weight);
            merge_in_place(symbols, pair, new_id);
            let (symbols, weight) = (&words[idx].0, words[idx].1);
            stats.add_word(idx, symbols, weight);
        }
        stats.counts.remove(&pair);
    }
    Ok(vocab)
}

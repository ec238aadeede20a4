//! Text format for a trained vocabulary:
//!
//! ```text
//! kgpt-vocab 1
//! merges 2
//! 72 101
//! 263 108
//! specials 7
//! 0 [PAD]
//! ...
//! ```
//!
//! Merge `k` creates token id `BASE_VOCAB + k` from its two parts. The
//! special table is checked against the ids this build expects.

use std::path::Path;

use kgpt_core::tokenizer::{SubwordVocab, SPECIAL_TOKENS};

use crate::error::CliError;
use crate::io;

pub const VOCAB_HEADER: &str = "kgpt-vocab 1";

pub fn render(vocab: &SubwordVocab) -> String {
    let mut out = format!("{VOCAB_HEADER}\nmerges {}\n", vocab.merges().len());
    for (a, b) in vocab.merges() {
        out.push_str(&format!("{a} {b}\n"));
    }
    out.push_str(&format!("specials {}\n", SPECIAL_TOKENS.len()));
    for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
        out.push_str(&format!("{i} {s}\n"));
    }
    out
}

fn counted<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<usize, String> {
    let line = lines
        .next()
        .ok_or_else(|| format!("missing `{key}` line"))?;
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix(' '))
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| format!("expected `{key} <count>`, found {line:?}"))
}

fn parse_inner(text: &str) -> Result<SubwordVocab, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(VOCAB_HEADER) => {}
        other => return Err(format!("expected header {VOCAB_HEADER:?}, found {other:?}")),
    }
    let n = counted(&mut lines, "merges")?;
    let mut merges = Vec::with_capacity(n);
    for k in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| format!("expected {n} merges, found {k}"))?;
        let mut it = line.split(' ').map(str::parse::<u32>);
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b)), None) => merges.push((a, b)),
            _ => return Err(format!("malformed merge line {line:?}")),
        }
    }
    let k = counted(&mut lines, "specials")?;
    if k != SPECIAL_TOKENS.len() {
        return Err(format!(
            "expected {} special tokens, found {k}",
            SPECIAL_TOKENS.len()
        ));
    }
    for (i, expected) in SPECIAL_TOKENS.iter().enumerate() {
        let line = lines.next().ok_or("truncated special table")?;
        if line != format!("{i} {expected}") {
            return Err(format!(
                "special token {i} should be {expected}, found {line:?}"
            ));
        }
    }
    if let Some(extra) = lines.find(|l| !l.is_empty()) {
        return Err(format!("trailing content {extra:?}"));
    }
    SubwordVocab::from_merges(&merges).map_err(|e| e.to_string())
}

pub fn parse(text: &str, path: &Path) -> Result<SubwordVocab, CliError> {
    parse_inner(text).map_err(|msg| CliError::Format {
        path: path.into(),
        msg,
    })
}

pub fn load(path: &Path) -> Result<SubwordVocab, CliError> {
    parse(&io::read_text(path)?, path)
}

pub fn save(path: &Path, vocab: &SubwordVocab) -> Result<(), CliError> {
    io::write_atomic(path, render(vocab).as_bytes())
}

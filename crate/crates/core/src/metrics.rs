//! Corpus BLEU-4, ROUGE-L and perplexity.
//!
//! Both text metrics tokenize by whitespace after lowercasing.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

/// Precision substituted for an n-gram order with no matches.
pub const ZERO_PRECISION: f64 = 1e-9;
pub const ROUGE_BETA: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("{hypotheses} hypotheses but {references} reference sets")]
    LengthMismatch {
        hypotheses: usize,
        references: usize,
    },
    #[error("item {0} has no references")]
    NoReferences(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub bleu4: f64,
    pub rouge_l: f64,
    pub perplexity: Option<f64>,
    pub items: usize,
    /// Always `None`: METEOR is not computed.
    pub meteor: Option<f64>,
}

pub fn metric_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

fn check<H, R>(hyps: &[H], refs: &[R]) -> Result<(), MetricsError>
where
    R: AsRef<[String]>,
{
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hyps.len(),
            references: refs.len(),
        });
    }
    if let Some(i) = refs.iter().position(|r| r.as_ref().is_empty()) {
        return Err(MetricsError::NoReferences(i));
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> BTreeMap<&[String], usize> {
    let mut m = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 on a 0–100 scale.
///
/// Reference length per item is the reference closest in length to the
/// hypothesis, preferring the shorter one on ties.
pub fn bleu4(hyps: &[String], refs: &[Vec<String>]) -> Result<f64, MetricsError> {
    check(hyps, refs)?;
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, rs) in hyps.iter().zip(refs) {
        let h = metric_tokens(h);
        let rs: Vec<Vec<String>> = rs.iter().map(|r| metric_tokens(r)).collect();
        hyp_len += h.len();
        ref_len += rs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(h.len()), l))
            .unwrap_or(0);
        for n in 1..=4 {
            let hc = ngram_counts(&h, n);
            let rcs: Vec<_> = rs.iter().map(|r| ngram_counts(r, n)).collect();
            for (gram, &c) in &hc {
                let max_ref = rcs
                    .iter()
                    .map(|rc| rc.get(gram).copied().unwrap_or(0))
                    .max()
                    .unwrap_or(0);
                matches[n - 1] += c.min(max_ref);
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let log_mean = (0..4)
        .map(|i| {
            let p = if matches[i] == 0 {
                ZERO_PRECISION
            } else {
                matches[i] as f64 / totals[i] as f64
            };
            p.ln()
        })
        .sum::<f64>()
        / 4.0;
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * bp * log_mean.exp())
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_l_pair(h: &[String], r: &[String]) -> f64 {
    if h.is_empty() && r.is_empty() {
        return 1.0;
    }
    let lcs = lcs_len(h, r);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / h.len() as f64;
    let rec = lcs as f64 / r.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * rec / (rec + b2 * p)
}

/// Mean over items of the best LCS F-measure against any reference, ×100.
pub fn rouge_l(hyps: &[String], refs: &[Vec<String>]) -> Result<f64, MetricsError> {
    check(hyps, refs)?;
    if hyps.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = hyps
        .iter()
        .zip(refs)
        .map(|(h, rs)| {
            let h = metric_tokens(h);
            rs.iter()
                .map(|r| rouge_l_pair(&h, &metric_tokens(r)))
                .fold(0.0, f64::max)
        })
        .sum();
    Ok(100.0 * total / hyps.len() as f64)
}

/// `exp(total_nll / tokens)`; infinite when there are no tokens.
pub fn perplexity(total_nll: f64, tokens: usize) -> f64 {
    if tokens == 0 {
        return f64::infinity();
    }
    (total_nll / tokens as f64).exp()
}

pub fn evaluate(
    hyps: &[String],
    refs: &[Vec<String>],
    ppl: Option<f64>,
) -> Result<EvalResult, MetricsError> {
    Ok(EvalResult {
        bleu4: bleu4(hyps, refs)?,
        rouge_l: rouge_l(hyps, refs)?,
        perplexity: ppl,
        items: hyps.len(),
        meteor: None,
    })
}

//! Transformer decoder with cross-attention and the copy gate, plus the
//! training loss and greedy/beam generation.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::encoder::{self, encode_field, EncoderOutput, NodeKind, SourceInput};
use crate::model::{attend, ffn, linear, norm, EncoderKind, Model, ModelError};
use crate::numerics::{Grads, Real, Tape, Tensor, Var};
use crate::record::KnowledgeRecord;
use crate::tokenizer::{SubwordVocab, BOS, EOS};

/// Added inside the logarithm of mixed probabilities so an underflowed
/// probability gives a large but finite loss and gradient.
pub const PROB_FLOOR: f64 = 1e-12;

impl SourceInput {
    /// Token id of every copyable input position, in copy-view order.
    pub fn copy_ids(&self, kind: EncoderKind) -> Vec<u32> {
        match kind {
            EncoderKind::Sequence => self.linear.tokens.clone(),
            EncoderKind::Graph => self
                .graph
                .nodes
                .iter()
                .zip(&self.node_ids)
                .filter(|(n, _)| matches!(n.kind, NodeKind::Leaf(_)))
                .flat_map(|(_, ids)| ids.iter().copied())
                .collect(),
        }
    }
}

/// A tokenized (record, text) training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub source: SourceInput,
    /// Target subwords followed by `EOS`.
    pub target: Vec<u32>,
}

impl Example {
    pub fn new(
        record: &KnowledgeRecord,
        text: &str,
        vocab: &SubwordVocab,
        model_config: &crate::model::ModelConfig,
    ) -> Result<Self, ModelError> {
        let source = encoder::prepare_source(record, vocab, model_config)?;
        Ok(Self {
            source,
            target: prepare_target(text, vocab, model_config.caps.max_target_tokens),
        })
    }

    /// Decoder inputs: `BOS` followed by all target tokens but the last.
    pub fn decoder_inputs(&self) -> Vec<usize> {
        core::iter::once(BOS as usize)
            .chain(
                self.target[..self.target.len() - 1]
                    .iter()
                    .map(|&t| t as usize),
            )
            .collect()
    }

    /// Target steps whose gold token occurs among the copyable inputs.
    pub fn copiable_steps(&self, kind: EncoderKind) -> Vec<bool> {
        let ids: BTreeSet<u32> = self.source.copy_ids(kind).into_iter().collect();
        self.target.iter().map(|t| ids.contains(t)).collect()
    }
}

/// Encodes `text` and appends `EOS`, keeping at most `max_tokens` ids.
pub fn prepare_target(text: &str, vocab: &SubwordVocab, max_tokens: usize) -> Vec<u32> {
    let mut ids = encode_field(vocab, text);
    ids.truncate(max_tokens.saturating_sub(1));
    ids.push(EOS);
    ids
}

/// Self-attention keys and values of the already-decoded prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCache<T: Real> {
    pub k: Tensor<T>,
    pub v: Tensor<T>,
}

fn cross_memory<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    g: Var,
) -> Result<Vec<(Var, Var)>, ModelError> {
    model
        .layout
        .decoder
        .iter()
        .map(|ids| {
            Ok((
                linear(tape, g, ids.cross.wk, None)?,
                linear(tape, g, ids.cross.wv, None)?,
            ))
        })
        .collect()
}

/// Runs the decoder blocks over `tokens` placed at positions
/// `start..start + tokens.len()`, after a cached prefix of length `start`.
/// Returns the last-layer states and each layer's full keys and values.
fn decoder_stack<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    tokens: &[usize],
    past: Option<&[LayerCache<T>]>,
    cross: &[(Var, Var)],
) -> Result<(Var, Vec<(Var, Var)>), ModelError> {
    let config = &model.config;
    let start = past.map_or(0, |p| p.first().map_or(0, |c| c.k.rows()));
    let t = tokens.len();
    if start + t > config.caps.max_target_tokens {
        return Err(ModelError::CapsExceeded(alloc::format!(
            "decoder position {} >= {}",
            start + t - 1,
            config.caps.max_target_tokens
        )));
    }
    let positions: Vec<usize> = (start..start + t).collect();
    let tok = tape.param(model.layout.token_embedding);
    let pos = tape.param(model.layout.decoder_position);
    let te = tape.gather(tok, tokens)?;
    let pe = tape.gather(pos, &positions)?;
    let mut x = tape.add(te, pe)?;
    let scale = Some(T::from_f64(1.0 / Float::sqrt(config.hidden as f64)));
    let m = start + t;
    let causal: Option<Vec<bool>> = (t > 1).then(|| {
        (0..t)
            .flat_map(|i| (0..m).map(move |j| j > start + i))
            .collect()
    });
    let mut kv = Vec::with_capacity(model.layout.decoder.len());
    for (l, ids) in model.layout.decoder.iter().enumerate() {
        let q = linear(tape, x, ids.self_attn.wq, None)?;
        let mut k = linear(tape, x, ids.self_attn.wk, None)?;
        let mut v = linear(tape, x, ids.self_attn.wv, None)?;
        if let Some(cache) = past.and_then(|p| p.get(l)).filter(|c| c.k.rows() > 0) {
            let pk = tape.constant(cache.k.clone());
            let pv = tape.constant(cache.v.clone());
            k = tape.concat_rows(&[pk, k])?;
            v = tape.concat_rows(&[pv, v])?;
        }
        let a = attend(tape, q, k, v, config.heads, scale, causal.as_deref())?;
        let a = linear(
            tape,
            a,
            ids.self_attn
                .wo
                .expect("decoder attention has an output projection"),
            None,
        )?;
        let r = tape.add(x, a)?;
        x = norm(tape, r, &ids.norm1)?;
        let q = linear(tape, x, ids.cross.wq, None)?;
        let (ck, cv) = cross[l];
        let a = attend(tape, q, ck, cv, config.heads, scale, None)?;
        let a = linear(
            tape,
            a,
            ids.cross
                .wo
                .expect("decoder attention has an output projection"),
            None,
        )?;
        let r = tape.add(x, a)?;
        x = norm(tape, r, &ids.norm2)?;
        let f = ffn(tape, x, &ids.ffn, config.activation)?;
        let r = tape.add(x, f)?;
        x = norm(tape, r, &ids.norm3)?;
        kv.push((k, v));
    }
    Ok((x, kv))
}

/// Vocabulary logits, copy scores and gate logits for decoder states `o`.
pub struct OutputHeads {
    pub logits: Var,
    pub copy_scores: Option<Var>,
    pub gate_logit: Option<Var>,
}

fn output_heads<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    o: Var,
    copy: Var,
) -> Result<OutputHeads, ModelError> {
    let logits = linear(tape, o, model.layout.out_w, Some(model.layout.out_b))?;
    let Some(gate) = &model.layout.gate else {
        return Ok(OutputHeads {
            logits,
            copy_scores: None,
            gate_logit: None,
        });
    };
    let mut scores = tape.matmul_nt(o, copy)?;
    if model.config.scale_copy {
        scores = tape.scale(
            scores,
            T::from_f64(1.0 / Float::sqrt(model.config.hidden as f64)),
        );
    }
    let h = linear(tape, o, gate.w1, Some(gate.b1))?;
    let h = tape.relu(h);
    let gate_logit = linear(tape, h, gate.w2, Some(gate.b2))?;
    Ok(OutputHeads {
        logits,
        copy_scores: Some(scores),
        gate_logit: Some(gate_logit),
    })
}

/// Teacher-forced forward pass over a whole target.
pub fn forward<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    ex: &Example,
) -> Result<(EncoderOutput, OutputHeads), ModelError> {
    let enc = encoder::encode(tape, model, &ex.source)?;
    let cross = cross_memory(tape, model, enc.g)?;
    let (o, _) = decoder_stack(tape, model, &ex.decoder_inputs(), None, &cross)?;
    let heads = output_heads(tape, model, o, enc.copy)?;
    Ok((enc, heads))
}

/// Multipliers turning per-example sums into the batch loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossScale {
    /// Applied to the summed token NLL; `1 / tokens in the batch`.
    pub token: f64,
    /// Applied to the summed copy-path NLL; `λ / copiable steps in the batch`.
    pub copy: f64,
}

impl LossScale {
    pub fn for_batch<'a>(
        batch: impl IntoIterator<Item = &'a Example>,
        config: &crate::model::ModelConfig,
    ) -> Self {
        let (mut tokens, mut copy) = (0usize, 0usize);
        for ex in batch {
            tokens += ex.target.len();
            if config.copy && config.copy_loss {
                copy += ex
                    .copiable_steps(config.encoder)
                    .iter()
                    .filter(|&&c| c)
                    .count();
            }
        }
        Self {
            token: 1.0 / tokens.max(1) as f64,
            copy: if copy == 0 {
                0.0
            } else {
                config.copy_loss_weight / copy as f64
            },
        }
    }
}

/// One example's share of the batch loss.
pub struct ExampleLoss {
    pub loss: Var,
    /// Summed `-ln P(y_t)` over the target.
    pub nll: f64,
    pub tokens: usize,
    pub copy_nll: f64,
    pub copy_steps: usize,
}

/// Negative log-likelihood of the target under the mixed distribution,
/// plus the copy-path term at copiable steps when enabled.
pub fn example_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    ex: &Example,
    scale: LossScale,
) -> Result<ExampleLoss, ModelError> {
    let (enc, heads) = forward(tape, model, ex)?;
    let y: Vec<usize> = ex.target.iter().map(|&t| t as usize).collect();
    let steps = y.len();
    let (Some(scores), Some(gate_logit)) = (heads.copy_scores, heads.gate_logit) else {
        let nll = tape.cross_entropy_sum(heads.logits, &y, None)?;
        let value = tape.value(nll).item()?.as_f64();
        let loss = tape.scale(nll, T::from_f64(scale.token));
        return Ok(ExampleLoss {
            loss,
            nll: value,
            tokens: steps,
            copy_nll: 0.0,
            copy_steps: 0,
        });
    };
    let pvoc = tape.softmax(heads.logits);
    let a = tape.pick(pvoc, &y)?;
    let alpha = tape.softmax(scores);
    let m = enc.copy_ids.len();
    let mut matches = vec![T::zero(); steps * m];
    for (t, &yt) in ex.target.iter().enumerate() {
        for (j, &xj) in enc.copy_ids.iter().enumerate() {
            if xj == yt {
                matches[t * m + j] = T::one();
            }
        }
    }
    let matches = tape.constant(Tensor::from_rows(steps, m, matches)?);
    let hit = tape.mul(alpha, matches)?;
    let c = tape.row_sum(hit);
    let p_col = tape.sigmoid(gate_logit);
    let p = tape.pick(p_col, &vec![0; steps])?;
    let neg_c = tape.scale(c, -T::one());
    let diff = tape.add(a, neg_c)?;
    let pd = tape.mul(p, diff)?;
    let mixed = tape.add(c, pd)?;
    let floor = T::from_f64(PROB_FLOOR);
    let mixed = tape.affine(mixed, T::one(), floor);
    let ln_p = tape.ln(mixed);
    let nll_value = -tape
        .value(ln_p)
        .data()
        .iter()
        .fold(0.0, |s, v| s + v.as_f64());
    let mut loss = tape.weighted_sum(ln_p, vec![T::from_f64(-scale.token); steps])?;

    let mut copy_nll = 0.0;
    let mut copy_steps = 0;
    if model.config.copy_loss {
        let copiable = ex.copiable_steps(model.config.encoder);
        copy_steps = copiable.iter().filter(|&&b| b).count();
        if copy_steps > 0 {
            let one_minus = tape.affine(p, -T::one(), T::one());
            let path = tape.mul(one_minus, c)?;
            let path = tape.affine(path, T::one(), floor);
            let ln_path = tape.ln(path);
            copy_nll = -tape
                .value(ln_path)
                .data()
                .iter()
                .zip(&copiable)
                .filter(|(_, &b)| b)
                .fold(0.0, |s, (v, _)| s + v.as_f64());
            let w = copiable
                .iter()
                .map(|&b| {
                    if b {
                        T::from_f64(-scale.copy)
                    } else {
                        T::zero()
                    }
                })
                .collect();
            let term = tape.weighted_sum(ln_path, w)?;
            loss = tape.add(loss, term)?;
        }
    }
    Ok(ExampleLoss {
        loss,
        nll: nll_value,
        tokens: steps,
        copy_nll,
        copy_steps,
    })
}

/// Sum of the example losses of `batch` on one tape.
pub fn batch_loss<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    batch: &[Example],
) -> Result<Var, ModelError> {
    let scale = LossScale::for_batch(batch, &model.config);
    let mut total: Option<Var> = None;
    for ex in batch {
        let l = example_loss(tape, model, ex, scale)?.loss;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    total.ok_or(ModelError::EmptyBatch)
}

/// Scalar summaries of one or more example losses.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossStats {
    /// Contribution to the scaled batch loss.
    pub loss: f64,
    pub nll: f64,
    pub tokens: usize,
    pub copy_nll: f64,
    pub copy_steps: usize,
}

impl LossStats {
    pub fn merge(&mut self, other: &LossStats) {
        self.loss += other.loss;
        self.nll += other.nll;
        self.tokens += other.tokens;
        self.copy_nll += other.copy_nll;
        self.copy_steps += other.copy_steps;
    }
}

/// Forward and backward pass for one example on its own tape.
pub fn example_grads<T: Real>(
    model: &Model<T>,
    ex: &Example,
    scale: LossScale,
) -> Result<(Grads<T>, LossStats), ModelError> {
    let mut tape = Tape::with_params(&model.params);
    let l = example_loss(&mut tape, model, ex, scale)?;
    let mut grads = Grads::zeros_like(&model.params);
    tape.backward(l.loss)?.accumulate_into(&mut grads);
    let stats = LossStats {
        loss: tape.value(l.loss).item()?.as_f64(),
        nll: l.nll,
        tokens: l.tokens,
        copy_nll: l.copy_nll,
        copy_steps: l.copy_steps,
    };
    Ok((grads, stats))
}

/// Forward-only batch statistics; `loss` is the mean per-token NLL plus
/// the weighted copy term.
pub fn nll_loss<T: Real>(model: &Model<T>, batch: &[Example]) -> Result<LossStats, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let scale = LossScale::for_batch(batch, &model.config);
    let mut total = LossStats::default();
    for ex in batch {
        let mut tape = Tape::with_params(&model.params);
        let l = example_loss(&mut tape, model, ex, scale)?;
        total.merge(&LossStats {
            loss: tape.value(l.loss).item()?.as_f64(),
            nll: l.nll,
            tokens: l.tokens,
            copy_nll: l.copy_nll,
            copy_steps: l.copy_steps,
        });
    }
    Ok(total)
}

/// Encoder states detached from any tape, for step-by-step decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates<T: Real> {
    pub g: Tensor<T>,
    pub copy: Tensor<T>,
    pub copy_ids: Vec<u32>,
    cross: Vec<(Tensor<T>, Tensor<T>)>,
}

pub fn encode_states<T: Real>(
    model: &Model<T>,
    src: &SourceInput,
) -> Result<EncoderStates<T>, ModelError> {
    let mut tape = Tape::with_params(&model.params);
    let enc = encoder::encode(&mut tape, model, src)?;
    let cross = cross_memory(&mut tape, model, enc.g)?;
    if enc.copy_ids.is_empty() {
        return Err(ModelError::EmptyEncoderOutput);
    }
    Ok(EncoderStates {
        g: tape.value(enc.g).clone(),
        copy: tape.value(enc.copy).clone(),
        copy_ids: enc.copy_ids,
        cross: cross
            .iter()
            .map(|&(k, v)| (tape.value(k).clone(), tape.value(v).clone()))
            .collect(),
    })
}

/// Generated prefix (starting with `BOS`) and the self-attention cache for
/// every prefix token already fed through the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<T: Real> {
    pub prefix: Vec<u32>,
    pub cache: Vec<LayerCache<T>>,
    /// Last-layer state of the most recent step.
    pub hidden: Vec<T>,
}

impl<T: Real> DecoderState<T> {
    pub fn new(model: &Model<T>) -> Self {
        let d = model.config.hidden;
        let empty = LayerCache {
            k: Tensor::zeros(&[0, d]),
            v: Tensor::zeros(&[0, d]),
        };
        Self {
            prefix: vec![BOS],
            cache: vec![empty; model.layout.decoder.len()],
            hidden: Vec::new(),
        }
    }

    fn cached(&self) -> usize {
        self.cache.first().map_or(0, |c| c.k.rows())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDistribution {
    /// Mixed next-token probabilities over the vocabulary.
    pub probs: Vec<f64>,
    /// Copy attention over copy-view positions; empty without copying.
    pub alpha: Vec<f64>,
    pub p_gen: f64,
}

fn softmax_f64(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| Float::exp(v - max)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn sigmoid_f64(x: f64) -> f64 {
    1.0 / (1.0 + Float::exp(-x))
}

/// `p_gen · P_voc(w) + (1 − p_gen) · Σ_{j: x_j = w} α_j`.
pub fn mix_distribution(p_voc: &[f64], alpha: &[f64], copy_ids: &[u32], p_gen: f64) -> Vec<f64> {
    let mut probs: Vec<f64> = p_voc.iter().map(|&p| p_gen * p).collect();
    for (&a, &id) in alpha.iter().zip(copy_ids) {
        probs[id as usize] += (1.0 - p_gen) * a;
    }
    probs
}

/// Feeds the not-yet-cached prefix tokens and returns the distribution of
/// the next token.
pub fn decode_step<T: Real>(
    state: &mut DecoderState<T>,
    enc: &EncoderStates<T>,
    model: &Model<T>,
) -> Result<StepDistribution, ModelError> {
    decode_step_gated(state, enc, model, None)
}

/// [`decode_step`] with the copy gate optionally forced to `p_gen`.
pub fn decode_step_gated<T: Real>(
    state: &mut DecoderState<T>,
    enc: &EncoderStates<T>,
    model: &Model<T>,
    p_gen: Option<f64>,
) -> Result<StepDistribution, ModelError> {
    if enc.copy_ids.is_empty() || enc.g.rows() == 0 {
        return Err(ModelError::EmptyEncoderOutput);
    }
    let start = state.cached();
    let new: Vec<usize> = state.prefix[start..].iter().map(|&t| t as usize).collect();
    let mut tape = Tape::with_params(&model.params);
    let cross: Vec<(Var, Var)> = enc
        .cross
        .iter()
        .map(|(k, v)| (tape.constant(k.clone()), tape.constant(v.clone())))
        .collect();
    let (o, kv) = decoder_stack(&mut tape, model, &new, Some(&state.cache), &cross)?;
    let copy = tape.constant(enc.copy.clone());
    let heads = output_heads(&mut tape, model, o, copy)?;
    for (c, (k, v)) in state.cache.iter_mut().zip(kv) {
        c.k = tape.value(k).clone();
        c.v = tape.value(v).clone();
    }
    let last = new.len() - 1;
    state.hidden = tape.value(o).row(last).to_vec();
    let row = |v: Var| -> Vec<f64> { tape.value(v).row(last).iter().map(|x| x.as_f64()).collect() };
    let p_voc = softmax_f64(&row(heads.logits));
    let (Some(scores), Some(gate)) = (heads.copy_scores, heads.gate_logit) else {
        return Ok(StepDistribution {
            probs: p_voc,
            alpha: Vec::new(),
            p_gen: 1.0,
        });
    };
    let alpha = softmax_f64(&row(scores));
    let p = p_gen.unwrap_or_else(|| sigmoid_f64(row(gate)[0]));
    let probs = mix_distribution(&p_voc, &alpha, &enc.copy_ids, p);
    Ok(StepDistribution {
        probs,
        alpha,
        p_gen: p,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

fn argmax_low(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

struct Hyp<T: Real> {
    state: DecoderState<T>,
    ids: Vec<u32>,
    logp: f64,
}

fn normalized(logp: f64, len: usize) -> f64 {
    logp / len.max(1) as f64
}

/// Generated token ids, without `BOS`/`EOS`. At most `max_len` tokens are
/// produced, further capped by the decoder position table.
pub fn generate_ids<T: Real>(
    model: &Model<T>,
    src: &SourceInput,
    mode: DecodeMode,
    max_len: usize,
) -> Result<Vec<u32>, ModelError> {
    let enc = encode_states(model, src)?;
    let max_len = max_len.min(model.config.caps.max_target_tokens);
    match mode {
        DecodeMode::Greedy => {
            let mut state = DecoderState::new(model);
            let mut out = Vec::new();
            for _ in 0..max_len {
                let dist = decode_step(&mut state, &enc, model)?;
                let w = argmax_low(&dist.probs) as u32;
                if w == EOS {
                    break;
                }
                out.push(w);
                state.prefix.push(w);
            }
            Ok(out)
        }
        DecodeMode::Beam(width) => beam_search(model, &enc, width.max(1), max_len),
    }
}

fn beam_search<T: Real>(
    model: &Model<T>,
    enc: &EncoderStates<T>,
    width: usize,
    max_len: usize,
) -> Result<Vec<u32>, ModelError> {
    let mut live = vec![Hyp {
        state: DecoderState::new(model),
        ids: Vec::new(),
        logp: 0.0,
    }];
    let mut finished: Vec<(f64, Vec<u32>)> = Vec::new();
    for _ in 0..max_len {
        let mut cands: Vec<(f64, Vec<u32>, usize, f64)> = Vec::new();
        for (hi, h) in live.iter_mut().enumerate() {
            let dist = decode_step(&mut h.state, enc, model)?;
            for (w, &p) in dist.probs.iter().enumerate() {
                let logp = h.logp + Float::ln(p);
                let mut ids = h.ids.clone();
                ids.push(w as u32);
                cands.push((normalized(logp, ids.len()), ids, hi, logp));
            }
        }
        cands.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then_with(|| a.1.cmp(&b.1))
        });
        cands.truncate(width);
        let mut next = Vec::new();
        for (score, mut ids, hi, logp) in cands {
            if *ids.last().expect("non-empty") == EOS {
                ids.pop();
                finished.push((score, ids));
            } else {
                let mut state = live[hi].state.clone();
                state.prefix.push(*ids.last().expect("non-empty"));
                next.push(Hyp { state, ids, logp });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    for h in live {
        finished.push((normalized(h.logp, h.ids.len()), h.ids));
    }
    finished.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then_with(|| a.1.cmp(&b.1))
    });
    Ok(finished.into_iter().next().map(|f| f.1).unwrap_or_default())
}

/// Decodes generated ids to text, dropping the leading space that every
/// encoded field carries.
pub fn ids_to_text(vocab: &SubwordVocab, ids: &[u32]) -> String {
    let text = vocab.decode(ids).unwrap_or_default();
    match text.strip_prefix(' ') {
        Some(s) => String::from(s),
        None => text,
    }
}

pub fn generate<T: Real>(
    model: &Model<T>,
    vocab: &SubwordVocab,
    record: &KnowledgeRecord,
    mode: DecodeMode,
    max_len: usize,
) -> Result<String, ModelError> {
    let src = encoder::prepare_source(record, vocab, &model.config)?;
    let ids = generate_ids(model, &src, mode, max_len)?;
    Ok(ids_to_text(vocab, &ids))
}

#[cfg(test)]
mod tests;

//! Pretraining and fine-tuning loops, checkpoints, evaluation and the
//! few-shot transfer harness.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{
    example_grads, generate_ids, ids_to_text, nll_loss, DecodeMode, Example, LossScale, LossStats,
};
use crate::metrics::{self, EvalResult, MetricsError};
use crate::model::{EncoderKind, Model, ModelConfig, ModelError};
use crate::numerics::{adam_step, AdamConfig, AdamState, Grads, NumericsError};
use crate::record::GroundedPair;
use crate::tokenizer::{train_bpe, SubwordVocab, TokenizerError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
    #[error("sample spec selects no items")]
    EmptyResult,
    #[error("{count} downstream test records appear in the pretraining corpus (first: {first})")]
    ContaminationDetected { count: usize, first: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
}

impl From<NumericsError> for TrainError {
    fn from(e: NumericsError) -> Self {
        TrainError::Model(ModelError::Numerics(e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Validate after every `eval_every` epochs (and after the last).
    pub eval_every: usize,
    /// Stop after this many validations without a BLEU improvement.
    pub patience: usize,
    /// Optional cap on optimizer steps.
    pub max_steps: Option<u64>,
    pub clip_norm: f64,
    /// Generation length limit for validation and test decoding.
    pub max_len: usize,
}

impl TrainConfig {
    pub fn desk(encoder: EncoderKind, vocab_size: usize) -> Self {
        Self {
            model: ModelConfig::desk(encoder, vocab_size),
            lr: 1e-3,
            batch_size: 16,
            epochs: 100,
            seed: 0,
            eval_every: 1,
            patience: 10,
            max_steps: None,
            clip_norm: 1.0,
            max_len: 64,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.model.validate()?;
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMetadata {
    /// Epoch of the selected parameters (0 for an untrained model).
    pub epoch: usize,
    pub steps: u64,
    pub val_bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub vocab: SubwordVocab,
    pub model: Model<f32>,
    pub metadata: TrainingMetadata,
}

impl Checkpoint {
    /// A freshly initialized model, seeded by `config.seed`.
    pub fn init(config: TrainConfig, vocab: SubwordVocab) -> Result<Self, TrainError> {
        config.validate()?;
        if vocab.len() > config.model.vocab_size {
            return Err(TrainError::ConfigMismatch(format!(
                "vocabulary has {} tokens but the model only {}",
                vocab.len(),
                config.model.vocab_size
            )));
        }
        let model = Model::new(config.model.clone(), config.seed)?;
        Ok(Self {
            version: CHECKPOINT_VERSION,
            config,
            vocab,
            model,
            metadata: TrainingMetadata::default(),
        })
    }
}

/// One line of the per-epoch metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub train_loss: f64,
    pub val_bleu: Option<f64>,
    pub val_ppl: Option<f64>,
}

/// Maps a function over items. Implementations must return results in
/// input order; reductions then happen sequentially in that order, which
/// keeps training bitwise reproducible for any worker count.
pub trait Executor: Sync {
    fn map<I: Sync, O: Send>(&self, items: &[I], f: &(dyn Fn(&I) -> O + Sync)) -> Vec<O>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<I: Sync, O: Send>(&self, items: &[I], f: &(dyn Fn(&I) -> O + Sync)) -> Vec<O> {
        items.iter().map(f).collect()
    }
}

/// Trains BPE on target texts and every record field, each with the
/// leading space the encoders add.
pub fn train_vocab(
    pairs: &[GroundedPair],
    vocab_size: usize,
) -> Result<SubwordVocab, TokenizerError> {
    let mut texts: Vec<String> = Vec::new();
    for p in pairs {
        texts.push(format!(" {}", p.text));
        for e in &p.record.entities {
            texts.push(format!(" {}", e.subject));
            for (a, b) in &e.triples {
                texts.push(format!(" {a}"));
                texts.push(format!(" {b}"));
            }
        }
    }
    train_bpe(&texts, vocab_size)
}

/// A tokenized pair together with its reference text.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPair {
    pub example: Example,
    pub reference: String,
}

pub fn prepare_pairs(
    pairs: &[GroundedPair],
    vocab: &SubwordVocab,
    config: &ModelConfig,
) -> Result<Vec<PreparedPair>, TrainError> {
    pairs
        .iter()
        .map(|p| {
            Ok(PreparedPair {
                example: Example::new(&p.record, &p.text, vocab, config)?,
                reference: p.text.clone(),
            })
        })
        .collect()
}

/// Generates for every pair and scores BLEU-4 / ROUGE-L against the
/// references, plus perplexity under the full output distribution.
pub fn evaluate<E: Executor>(
    model: &Model<f32>,
    vocab: &SubwordVocab,
    pairs: &[PreparedPair],
    mode: DecodeMode,
    max_len: usize,
    exec: &E,
) -> Result<EvalResult, TrainError> {
    let hyps = generate_all(model, vocab, pairs, mode, max_len, exec)?;
    let refs: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| alloc::vec![p.reference.clone()])
        .collect();
    let ppl = perplexity(model, pairs, exec)?;
    Ok(metrics::evaluate(&hyps, &refs, Some(ppl))?)
}

pub fn generate_all<E: Executor>(
    model: &Model<f32>,
    vocab: &SubwordVocab,
    pairs: &[PreparedPair],
    mode: DecodeMode,
    max_len: usize,
    exec: &E,
) -> Result<Vec<String>, TrainError> {
    exec.map(pairs, &|p: &PreparedPair| -> Result<String, ModelError> {
        Ok(ids_to_text(
            vocab,
            &generate_ids(model, &p.example.source, mode, max_len)?,
        ))
    })
    .into_iter()
    .map(|r| r.map_err(TrainError::from))
    .collect()
}

/// `exp(total NLL / total target tokens)`; independent of batching.
pub fn perplexity<E: Executor>(
    model: &Model<f32>,
    pairs: &[PreparedPair],
    exec: &E,
) -> Result<f64, TrainError> {
    let stats = exec.map(pairs, &|p: &PreparedPair| {
        nll_loss(model, core::slice::from_ref(&p.example))
    });
    let mut total = LossStats::default();
    for s in stats {
        total.merge(&s?);
    }
    Ok(metrics::perplexity(total.nll, total.tokens))
}

/// Gradients and statistics of one minibatch, reduced in item order.
pub fn batch_gradients<E: Executor>(
    model: &Model<f32>,
    batch: &[&Example],
    exec: &E,
) -> Result<(Grads<f32>, LossStats), TrainError> {
    let scale = LossScale::for_batch(batch.iter().copied(), &model.config);
    let parts = exec.map(batch, &|ex: &&Example| example_grads(model, ex, scale));
    let mut grads = Grads::zeros_like(&model.params);
    let mut stats = LossStats::default();
    for part in parts {
        let (g, s) = part?;
        grads.add_assign(&g)?;
        stats.merge(&s);
    }
    Ok((grads, stats))
}

/// Result of a training run: the best-validation model and the log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// Shuffled minibatch Adam with global-norm clipping. After each
/// validation the parameters with the best BLEU so far are kept; without a
/// validation set the final parameters are returned.
pub fn train<E: Executor>(
    start: Checkpoint,
    train_set: &[PreparedPair],
    val_set: &[PreparedPair],
    config: &TrainConfig,
    exec: &E,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let mut current = start;
    current.config = config.clone();
    current.model.config = config.model.clone();
    let mut best = current.clone();
    let mut best_bleu: Option<f64> = None;
    let mut stale = 0;
    let mut adam = AdamState::new(&current.model.params, AdamConfig::with_lr(config.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut steps = current.metadata.steps;
    let first_epoch = current.metadata.epoch;
    let mut log = Vec::new();
    for epoch in first_epoch + 1..=first_epoch + config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut capped = false;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i].example).collect();
            let (mut grads, stats) = batch_gradients(&current.model, &batch, exec)?;
            if !grads.is_finite() {
                return Err(TrainError::Model(ModelError::Numerics(
                    NumericsError::NonFinite("gradient"),
                )));
            }
            grads.clip_global_norm(config.clip_norm as f32);
            adam_step(&mut current.model.params, &grads, &mut adam)?;
            loss_sum += stats.loss;
            batches += 1;
            steps += 1;
            if config.max_steps.is_some_and(|m| steps >= m) {
                capped = true;
                break;
            }
        }
        current.metadata.epoch = epoch;
        current.metadata.steps = steps;
        let last = capped || epoch == first_epoch + config.epochs;
        let mut entry = EpochLog {
            epoch,
            steps,
            train_loss: loss_sum / batches as f64,
            val_bleu: None,
            val_ppl: None,
        };
        let mut stop = last;
        if !val_set.is_empty() && ((epoch - first_epoch) % config.eval_every == 0 || last) {
            let r = evaluate(
                &current.model,
                &current.vocab,
                val_set,
                DecodeMode::Greedy,
                config.max_len,
                exec,
            )?;
            entry.val_bleu = Some(r.bleu4);
            entry.val_ppl = r.perplexity;
            current.metadata.val_bleu = Some(r.bleu4);
            if best_bleu.is_none_or(|b| r.bleu4 > b) {
                best_bleu = Some(r.bleu4);
                best = current.clone();
                stale = 0;
            } else {
                stale += 1;
                stop |= stale >= config.patience;
            }
        }
        on_epoch(&entry);
        log.push(entry);
        if stop {
            break;
        }
    }
    if val_set.is_empty() {
        best = current;
    }
    best.metadata.steps = steps;
    Ok(TrainOutcome {
        checkpoint: best,
        log,
    })
}

/// Trains a fresh model on grounded pairs.
pub fn pretrain<E: Executor>(
    train_pairs: &[GroundedPair],
    val_pairs: &[GroundedPair],
    vocab: &SubwordVocab,
    config: &TrainConfig,
    exec: &E,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    if train_pairs.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let start = Checkpoint::init(config.clone(), vocab.clone())?;
    let train_set = prepare_pairs(train_pairs, vocab, &config.model)?;
    let val_set = prepare_pairs(val_pairs, vocab, &config.model)?;
    train(start, &train_set, &val_set, config, exec, on_epoch)
}

/// Architecture fields that must agree between a checkpoint and a
/// fine-tuning config.
fn check_compatible(a: &ModelConfig, b: &ModelConfig) -> Result<(), TrainError> {
    let fields = [
        ("encoder", a.encoder == b.encoder),
        ("vocab_size", a.vocab_size == b.vocab_size),
        ("hidden", a.hidden == b.hidden),
        ("layers", a.layers == b.layers),
        ("decoder_layers", a.decoder_layers == b.decoder_layers),
        ("heads", a.heads == b.heads),
        ("ffn", a.ffn == b.ffn),
        ("activation", a.activation == b.activation),
        ("copy", a.copy == b.copy),
        (
            "entity_order_embedding",
            a.entity_order_embedding == b.entity_order_embedding,
        ),
    ];
    match fields.iter().find(|f| !f.1) {
        Some((name, _)) => Err(TrainError::ConfigMismatch(format!(
            "{name} differs from the checkpoint"
        ))),
        None => Ok(()),
    }
}

/// Continues training `ckpt` on downstream pairs. With zero epochs the
/// checkpoint is returned unchanged.
pub fn finetune<E: Executor>(
    ckpt: &Checkpoint,
    vocab: &SubwordVocab,
    train_pairs: &[GroundedPair],
    val_pairs: &[GroundedPair],
    config: &TrainConfig,
    exec: &E,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    if *vocab != ckpt.vocab {
        return Err(TrainError::ConfigMismatch(
            "vocabulary differs from the checkpoint".into(),
        ));
    }
    check_compatible(&ckpt.config.model, &config.model)?;
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            checkpoint: ckpt.clone(),
            log: Vec::new(),
        });
    }
    let train_set = prepare_pairs(train_pairs, vocab, &config.model)?;
    let val_set = prepare_pairs(val_pairs, vocab, &config.model)?;
    train(ckpt.clone(), &train_set, &val_set, config, exec, on_epoch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SampleSpec {
    Fraction(f64),
    Count(usize),
}

impl SampleSpec {
    /// Number of items selected from `n`; fractions round to nearest.
    pub fn size(&self, n: usize) -> usize {
        match *self {
            SampleSpec::Fraction(f) => ((f.clamp(0.0, 1.0) * n as f64) + 0.5) as usize,
            SampleSpec::Count(c) => c.min(n),
        }
    }
}

/// Seeded sample without replacement, in original order.
pub fn subsample<T: Clone>(items: &[T], spec: SampleSpec, seed: u64) -> Result<Vec<T>, TrainError> {
    let k = spec.size(items.len()).min(items.len());
    if k == 0 {
        return Err(TrainError::EmptyResult);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, items.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}

/// Fails if any downstream test record also occurs in the pretraining
/// corpus (compared by content, ignoring ids).
pub fn check_contamination(
    pretrain: &[GroundedPair],
    test: &[GroundedPair],
) -> Result<(), TrainError> {
    let seen: BTreeSet<String> = pretrain.iter().map(|p| p.record.content_key()).collect();
    let hits: Vec<&GroundedPair> = test
        .iter()
        .filter(|p| seen.contains(&p.record.content_key()))
        .collect();
    match hits.first() {
        Some(first) => Err(TrainError::ContaminationDetected {
            count: hits.len(),
            first: first.record.id.clone(),
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Pretrained,
    Scratch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub arm: Arm,
    pub spec: SampleSpec,
    pub samples: usize,
    pub seed: u64,
    pub bleu4: f64,
    pub rouge_l: f64,
}

/// Smallest grid size at which an arm reaches the target BLEU for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalSamples {
    pub seed: u64,
    pub pretrained: Option<usize>,
    pub scratch: Option<usize>,
    /// `scratch ÷ pretrained`. When scratch never reaches the target the
    /// largest grid size stands in and `censored` is set, so the value is a
    /// lower bound.
    pub ratio: Option<f64>,
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub target_bleu: f64,
    pub rows: Vec<TransferRow>,
    pub minimal: Vec<MinimalSamples>,
}

impl TransferReport {
    /// Builds the per-seed sample-efficiency table from grid rows.
    pub fn from_rows(target_bleu: f64, rows: Vec<TransferRow>, seeds: &[u64]) -> Self {
        let largest = rows.iter().map(|r| r.samples).max().unwrap_or(0);
        let minimal = seeds
            .iter()
            .map(|&seed| {
                let min_for = |arm| {
                    rows.iter()
                        .filter(|r| r.seed == seed && r.arm == arm && r.bleu4 >= target_bleu)
                        .map(|r| r.samples)
                        .min()
                };
                let (p, s) = (min_for(Arm::Pretrained), min_for(Arm::Scratch));
                let ratio = p.map(|p| s.unwrap_or(largest) as f64 / p as f64);
                MinimalSamples {
                    seed,
                    pretrained: p,
                    scratch: s,
                    ratio,
                    censored: p.is_some() && s.is_none(),
                }
            })
            .collect();
        Self {
            target_bleu,
            rows,
            minimal,
        }
    }

    pub fn mean_bleu(&self, arm: Arm, samples: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.arm == arm && r.samples == samples)
            .map(|r| r.bleu4)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Downstream data for the transfer grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Downstream<'a> {
    pub train: &'a [GroundedPair],
    pub val: &'a [GroundedPair],
    pub test: &'a [GroundedPair],
}

/// Fine-tunes `pretrained` and a from-scratch model on each subsample of
/// the downstream training set and scores both on the test set. The
/// contamination check against `pretrain_corpus` runs first.
#[allow(clippy::too_many_arguments)]
pub fn run_transfer_experiment<E: Executor>(
    pretrain_corpus: &[GroundedPair],
    pretrained: &Checkpoint,
    data: Downstream<'_>,
    specs: &[SampleSpec],
    seeds: &[u64],
    config: &TrainConfig,
    target_bleu: f64,
    exec: &E,
) -> Result<TransferReport, TrainError> {
    check_contamination(pretrain_corpus, data.test)?;
    let vocab = &pretrained.vocab;
    let test = prepare_pairs(data.test, vocab, &config.model)?;
    let mut rows = Vec::new();
    for &seed in seeds {
        for &spec in specs {
            let sub = subsample(data.train, spec, seed)?;
            let mut run = config.clone();
            run.seed = seed;
            for arm in [Arm::Pretrained, Arm::Scratch] {
                let start = match arm {
                    Arm::Pretrained => pretrained.clone(),
                    Arm::Scratch => Checkpoint::init(run.clone(), vocab.clone())?,
                };
                let out = finetune(&start, vocab, &sub, data.val, &run, exec, &mut |_| {})?;
                let r = evaluate(
                    &out.checkpoint.model,
                    vocab,
                    &test,
                    DecodeMode::Greedy,
                    run.max_len,
                    exec,
                )?;
                rows.push(TransferRow {
                    arm,
                    spec,
                    samples: sub.len(),
                    seed,
                    bleu4: r.bleu4,
                    rouge_l: r.rouge_l,
                });
            }
        }
    }
    Ok(TransferReport::from_rows(target_bleu, rows, seeds))
}

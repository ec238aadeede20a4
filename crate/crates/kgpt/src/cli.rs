//! The `kgpt` command line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use kgpt_core::corpus::{self, AnnotatedSentence, CandidateFilter, KbEntry, KnowledgeBase};
use kgpt_core::decoder::{self, DecodeMode};
use kgpt_core::gradsuite;
use kgpt_core::metrics::{self, EvalResult};
use kgpt_core::model::EncoderKind;
use kgpt_core::record::{GroundedPair, KnowledgeRecord};
use kgpt_core::synth::{self, Family};
use kgpt_core::tokenizer::DEFAULT_VOCAB_SIZE;
use kgpt_core::training::{
    self, Checkpoint, Downstream, EpochLog, Executor, SampleSpec, TrainConfig, TransferReport,
};

use crate::checkpoint;
use crate::error::CliError;
use crate::exec::ThreadExecutor;
use crate::io;
use crate::manifest::RunManifest;
use crate::metric_log;
use crate::vocab_file;

#[derive(Parser, Debug)]
#[command(
    name = "kgpt",
    version,
    about = "Knowledge-grounded pre-training for data-to-text generation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Extract and score grounded pairs from annotated sentences and a KB.
    BuildCorpus(BuildCorpusArgs),
    /// Corpus statistics as JSON plus a predicate histogram as TSV.
    CorpusStats(CorpusStatsArgs),
    /// Train a BPE vocabulary on texts and record fields.
    TrainTokenizer(TrainTokenizerArgs),
    /// Train a fresh model on grounded pairs.
    Pretrain(PretrainArgs),
    /// Continue training a checkpoint on downstream pairs.
    Finetune(FinetuneArgs),
    /// Generate one sentence per record.
    Generate(GenerateArgs),
    /// Score hypotheses against references.
    Evaluate(EvaluateArgs),
    /// Pretrained vs from-scratch fine-tuning over a grid of sample sizes.
    FewShot(FewShotArgs),
    /// Evaluate a checkpoint on a dataset without fine-tuning.
    ZeroShot(ZeroShotArgs),
    /// Check analytic gradients against finite differences.
    GradCheck(GradCheckArgs),
    /// Write template-generated grounded pairs.
    SynthData(SynthDataArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EncoderArg {
    Graph,
    Seq,
}

impl From<EncoderArg> for EncoderKind {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Graph => EncoderKind::Graph,
            EncoderArg::Seq => EncoderKind::Sequence,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FamilyArg {
    A,
    B,
}

#[derive(Args, Debug)]
pub struct ModelFlags {
    #[arg(long, value_enum, default_value_t = EncoderArg::Graph)]
    pub encoder: EncoderArg,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub copy: Switch,
    #[arg(long = "copy-loss", value_enum, default_value_t = Switch::On)]
    pub copy_loss: Switch,
    /// Model vocabulary size [default: size of the vocabulary file]
    #[arg(long = "vocab-size")]
    pub vocab_size: Option<usize>,
    /// Hidden size; the feed-forward width follows as 4 × hidden
    #[arg(long, default_value_t = 128)]
    pub hidden: usize,
    /// Graph rounds or transformer blocks, encoder and decoder alike
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
}

#[derive(Args, Debug)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Generation length limit for validation and test decoding
    #[arg(long = "max-len", default_value_t = 64)]
    pub max_len: usize,
    /// Validations without BLEU improvement before stopping
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    #[arg(long = "eval-every", default_value_t = 1)]
    pub eval_every: usize,
    /// Cap on optimizer steps [default: none]
    #[arg(long = "max-steps")]
    pub max_steps: Option<u64>,
    /// JSON file with (part of) a training config; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct DecodeFlags {
    /// Beam width; 1 decodes greedily
    #[arg(long, default_value_t = 1)]
    pub beam: usize,
    #[arg(long = "max-len", default_value_t = 64)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

impl DecodeFlags {
    fn mode(&self) -> Result<DecodeMode, CliError> {
        match self.beam {
            0 => Err(CliError::Usage("--beam must be at least 1".into())),
            1 => Ok(DecodeMode::Greedy),
            w => Ok(DecodeMode::Beam(w)),
        }
    }
}

#[derive(Args, Debug)]
pub struct BuildCorpusArgs {
    /// Annotated sentences, JSONL {"tokens", "anchors"}
    #[arg(long)]
    pub docs: PathBuf,
    /// Knowledge base, JSONL {"id", "label", "triples"}
    #[arg(long)]
    pub kb: PathBuf,
    /// Selected pairs, JSONL
    #[arg(long)]
    pub out: PathBuf,
    /// Minimum grounding score to keep a pair
    #[arg(long, default_value_t = corpus::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Also write every scored candidate here
    #[arg(long)]
    pub scored: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CorpusStatsArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// JSON report
    #[arg(long)]
    pub out: PathBuf,
    /// Predicate histogram [default: the report path with a .tsv extension]
    #[arg(long)]
    pub hist: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainTokenizerArgs {
    /// Grounded-pair JSONL files
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long = "vocab-size", default_value_t = DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Checkpoint file
    #[arg(long)]
    pub out: PathBuf,
    /// Metric log CSV [default: <out>.metrics.csv]
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train_flags: TrainFlags,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Metric log CSV [default: <out>.metrics.csv]
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub train_flags: TrainFlags,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Record or grounded-pair JSONL
    #[arg(long)]
    pub data: PathBuf,
    /// Hypotheses, JSONL {"id", "hypothesis"}
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub decode: DecodeFlags,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hyps: PathBuf,
    /// Grounded-pair JSONL; lines sharing an id are alternative references
    #[arg(long)]
    pub refs: PathBuf,
    /// Checkpoint for perplexity on the references
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct FewShotArgs {
    /// Pretrained checkpoint
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Pretraining corpus, checked for overlap with the test set
    #[arg(long = "pretrain-data")]
    pub pretrain_data: PathBuf,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    /// Fractions of the training set, comma separated
    #[arg(
        long,
        value_delimiter = ',',
        conflicts_with = "counts",
        required_unless_present = "counts"
    )]
    pub fractions: Vec<f64>,
    /// Sample counts, comma separated
    #[arg(long, value_delimiter = ',')]
    pub counts: Vec<usize>,
    /// Subsampling and initialization seeds, comma separated
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// BLEU an arm has to reach for the sample-efficiency table
    #[arg(long = "target-bleu", default_value_t = 30.0)]
    pub target_bleu: f64,
    /// JSON report; a TSV table is written next to it
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train_flags: TrainFlags,
}

#[derive(Args, Debug)]
pub struct ZeroShotArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// JSON evaluation result
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the hypotheses here
    #[arg(long)]
    pub hyps: Option<PathBuf>,
    #[command(flatten)]
    pub decode: DecodeFlags,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    /// JSON report
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthDataArgs {
    #[arg(long, value_enum)]
    pub family: FamilyArg,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// One line of `generate` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub id: String,
    pub hypothesis: String,
}

/// Which flags were typed on the command line, as opposed to defaults.
struct Given<'a>(&'a ArgMatches);

impl Given<'_> {
    fn has(&self, id: &str) -> bool {
        matches!(self.0.try_get_raw(id), Ok(Some(_)))
            && self.0.value_source(id) == Some(ValueSource::CommandLine)
    }
}

fn merge_json(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Defaults, then the config file, then flags given on the command line.
fn resolve_config(
    mut base: TrainConfig,
    model: Option<&ModelFlags>,
    t: &TrainFlags,
    given: &Given<'_>,
) -> Result<TrainConfig, CliError> {
    if let Some(path) = &t.config {
        let mut v = serde_json::to_value(&base).expect("serializable config");
        merge_json(&mut v, io::read_json::<Value>(path)?);
        base = serde_json::from_value(v).map_err(|e| CliError::Parse {
            path: path.clone(),
            line: 0,
            msg: e.to_string(),
        })?;
    }
    if let Some(m) = model {
        let c = &mut base.model;
        if given.has("encoder") {
            c.encoder = m.encoder.into();
        }
        if given.has("copy") {
            c.copy = m.copy.on();
        }
        if given.has("copy_loss") {
            c.copy_loss = m.copy_loss.on();
        }
        if let Some(v) = m.vocab_size {
            c.vocab_size = v;
        }
        if given.has("hidden") {
            c.hidden = m.hidden;
            c.ffn = 4 * m.hidden;
        }
        if given.has("layers") {
            c.layers = m.layers;
            c.decoder_layers = m.layers;
        }
        if given.has("heads") {
            c.heads = m.heads;
        }
    }
    if given.has("lr") {
        base.lr = t.lr;
    }
    if given.has("batch") {
        base.batch_size = t.batch;
    }
    if given.has("epochs") {
        base.epochs = t.epochs;
    }
    if given.has("seed") {
        base.seed = t.seed;
    }
    if given.has("max_len") {
        base.max_len = t.max_len;
    }
    if given.has("patience") {
        base.patience = t.patience;
    }
    if given.has("eval_every") {
        base.eval_every = t.eval_every;
    }
    if t.max_steps.is_some() {
        base.max_steps = t.max_steps;
    }
    base.validate()?;
    Ok(base)
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(ext);
    path.with_file_name(name)
}

fn read_pairs(path: &Path) -> Result<Vec<GroundedPair>, CliError> {
    let pairs: Vec<GroundedPair> = io::read_jsonl(path)?;
    for p in &pairs {
        p.record.validate()?;
    }
    Ok(pairs)
}

fn read_optional_pairs(path: Option<&PathBuf>) -> Result<Vec<GroundedPair>, CliError> {
    path.map_or(Ok(Vec::new()), |p| read_pairs(p))
}

fn print_epoch(e: &EpochLog) {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
    eprintln!(
        "epoch {:>3}  steps {:>6}  loss {:.4}  val_bleu {}  val_ppl {}",
        e.epoch,
        e.steps,
        e.train_loss,
        opt(e.val_bleu),
        opt(e.val_ppl)
    );
}

/// Records in first-appearance order of their ids.
fn unique_records(records: Vec<KnowledgeRecord>) -> Vec<KnowledgeRecord> {
    let mut seen = std::collections::BTreeSet::new();
    records
        .into_iter()
        .filter(|r| seen.insert(r.id.clone()))
        .collect()
}

pub fn generate_hypotheses<E: Executor>(
    ckpt: &Checkpoint,
    records: &[KnowledgeRecord],
    mode: DecodeMode,
    max_len: usize,
    exec: &E,
) -> Result<Vec<Hypothesis>, CliError> {
    let texts = exec.map(records, &|r: &KnowledgeRecord| {
        decoder::generate(&ckpt.model, &ckpt.vocab, r, mode, max_len)
    });
    records
        .iter()
        .zip(texts)
        .map(|(r, t)| {
            Ok(Hypothesis {
                id: r.id.clone(),
                hypothesis: t?,
            })
        })
        .collect()
}

/// Groups references by id and scores the matching hypotheses. Perplexity
/// covers every reference pair when a checkpoint is given.
pub fn score<E: Executor>(
    hyps: &[Hypothesis],
    refs: &[GroundedPair],
    ckpt: Option<&Checkpoint>,
    exec: &E,
) -> Result<EvalResult, CliError> {
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for p in refs {
        let slot = grouped.entry(&p.record.id).or_insert_with(|| {
            order.push(&p.record.id);
            Vec::new()
        });
        slot.push(p.text.clone());
    }
    let by_id: BTreeMap<&str, &str> = hyps
        .iter()
        .map(|h| (h.id.as_str(), h.hypothesis.as_str()))
        .collect();
    let mut h = Vec::with_capacity(order.len());
    let mut r = Vec::with_capacity(order.len());
    for id in order {
        let hyp = by_id
            .get(id)
            .ok_or_else(|| CliError::MissingHypothesis(id.to_string()))?;
        h.push(hyp.to_string());
        r.push(grouped[id].clone());
    }
    let ppl = match ckpt {
        Some(c) => {
            let prepared = training::prepare_pairs(refs, &c.vocab, &c.model.config)?;
            Some(training::perplexity(&c.model, &prepared, exec)?)
        }
        None => None,
    };
    Ok(metrics::evaluate(&h, &r, ppl)?)
}

fn transfer_tsv(report: &TransferReport) -> String {
    let mut out = String::from("arm\tspec\tsamples\tseed\tbleu4\trouge_l\n");
    for row in &report.rows {
        let arm = serde_json::to_value(row.arm).expect("serializable arm");
        let spec = match row.spec {
            SampleSpec::Fraction(f) => format!("fraction={f}"),
            SampleSpec::Count(c) => format!("count={c}"),
        };
        out.push_str(&format!(
            "{}\t{spec}\t{}\t{}\t{:.4}\t{:.4}\n",
            arm.as_str().unwrap_or_default(),
            row.samples,
            row.seed,
            row.bleu4,
            row.rouge_l
        ));
    }
    out
}

/// Parses `args` (program name first), runs the subcommand and writes its
/// manifest. Help and version requests print and succeed.
pub fn run(args: &[String]) -> Result<(), CliError> {
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                return Err(CliError::Usage(e.render().to_string()));
            }
            return Err(CliError::Usage(
                e.kind().to_string() + ": " + e.render().to_string().trim(),
            ));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let given = Given(sub);
    let start = Instant::now();
    let mut manifest = RunManifest::new(name, &args[1.min(args.len())..]);
    execute(cli.command, &given, &mut manifest)?;
    manifest.wall_time_secs = start.elapsed().as_secs_f64();
    manifest.write_all()
}

fn execute(command: Command, given: &Given<'_>, m: &mut RunManifest) -> Result<(), CliError> {
    match command {
        Command::BuildCorpus(a) => {
            let docs: Vec<AnnotatedSentence> = io::read_jsonl(&a.docs)?;
            let kb = KnowledgeBase::new(io::read_jsonl::<KbEntry>(&a.kb)?)?;
            let filter = CandidateFilter::default();
            let scored = corpus::build_corpus(&docs, &kb, &filter)?;
            let kept = corpus::select(&scored, a.threshold);
            io::write_jsonl(&a.out, &kept)?;
            if let Some(p) = &a.scored {
                io::write_jsonl(p, &scored)?;
                m.output("scored", p);
            }
            eprintln!(
                "kept {} of {} candidates from {} sentences",
                kept.len(),
                scored.len(),
                docs.len()
            );
            m.config = serde_json::json!({ "threshold": a.threshold, "filter": filter });
            m.input("docs", &a.docs);
            m.input("kb", &a.kb);
            m.output("pairs", &a.out);
        }
        Command::CorpusStats(a) => {
            let pairs = read_pairs(&a.data)?;
            let stats = corpus::stats(&pairs)?;
            let hist = a
                .hist
                .clone()
                .unwrap_or_else(|| a.out.with_extension("tsv"));
            io::write_json(&a.out, &stats)?;
            let mut tsv = String::from("predicate\tcount\n");
            for (p, c) in &stats.predicate_histogram {
                tsv.push_str(&format!("{p}\t{c}\n"));
            }
            io::write_atomic(&hist, tsv.as_bytes())?;
            m.input("data", &a.data);
            m.output("stats", &a.out);
            m.output("histogram", &hist);
        }
        Command::TrainTokenizer(a) => {
            let mut pairs = Vec::new();
            for (i, p) in a.data.iter().enumerate() {
                pairs.extend(read_pairs(p)?);
                m.input(&format!("data{i}"), p);
            }
            let vocab = training::train_vocab(&pairs, a.vocab_size)?;
            vocab_file::save(&a.out, &vocab)?;
            eprintln!("{} tokens ({} merges)", vocab.len(), vocab.merges().len());
            m.config = serde_json::json!({ "vocab_size": a.vocab_size });
            m.output("vocab", &a.out);
        }
        Command::Pretrain(a) => {
            let vocab = vocab_file::load(&a.vocab)?;
            let base = TrainConfig::desk(EncoderKind::Graph, vocab.len());
            let config = resolve_config(base, Some(&a.model), &a.train_flags, given)?;
            let train = read_pairs(&a.train)?;
            let val = read_optional_pairs(a.val.as_ref())?;
            let exec = ThreadExecutor::new(a.train_flags.threads);
            let out = training::pretrain(&train, &val, &vocab, &config, &exec, &mut print_epoch)?;
            let log = a
                .log
                .clone()
                .unwrap_or_else(|| with_extension(&a.out, ".metrics.csv"));
            checkpoint::save(&a.out, &out.checkpoint)?;
            metric_log::write(&log, &out.log)?;
            record_training(
                m,
                &config,
                exec.threads(),
                &a.train,
                a.val.as_ref(),
                &a.out,
                &log,
            );
            m.input("vocab", &a.vocab);
        }
        Command::Finetune(a) => {
            let ckpt = checkpoint::load(&a.ckpt)?;
            let base = TrainConfig {
                model: ckpt.config.model.clone(),
                ..TrainConfig::desk(EncoderKind::Graph, 0)
            };
            let config = resolve_config(base, Some(&a.model), &a.train_flags, given)?;
            let train = read_pairs(&a.train)?;
            let val = read_optional_pairs(a.val.as_ref())?;
            let exec = ThreadExecutor::new(a.train_flags.threads);
            let vocab = ckpt.vocab.clone();
            let out = training::finetune(
                &ckpt,
                &vocab,
                &train,
                &val,
                &config,
                &exec,
                &mut print_epoch,
            )?;
            let log = a
                .log
                .clone()
                .unwrap_or_else(|| with_extension(&a.out, ".metrics.csv"));
            checkpoint::save(&a.out, &out.checkpoint)?;
            metric_log::write(&log, &out.log)?;
            record_training(
                m,
                &config,
                exec.threads(),
                &a.train,
                a.val.as_ref(),
                &a.out,
                &log,
            );
            m.input("ckpt", &a.ckpt);
        }
        Command::Generate(a) => {
            let ckpt = checkpoint::load(&a.ckpt)?;
            let records = unique_records(io::read_jsonl(&a.data)?);
            let exec = ThreadExecutor::new(a.decode.threads);
            let hyps =
                generate_hypotheses(&ckpt, &records, a.decode.mode()?, a.decode.max_len, &exec)?;
            io::write_jsonl(&a.out, &hyps)?;
            m.config = serde_json::json!({ "beam": a.decode.beam, "max_len": a.decode.max_len });
            m.threads = exec.threads();
            m.input("ckpt", &a.ckpt);
            m.input("data", &a.data);
            m.output("hypotheses", &a.out);
        }
        Command::Evaluate(a) => {
            let hyps: Vec<Hypothesis> = io::read_jsonl(&a.hyps)?;
            let refs = read_pairs(&a.refs)?;
            let ckpt = a.ckpt.as_deref().map(checkpoint::load).transpose()?;
            let exec = ThreadExecutor::new(a.threads);
            let result = score(&hyps, &refs, ckpt.as_ref(), &exec)?;
            io::write_json(&a.out, &result)?;
            println!(
                "{}",
                serde_json::to_string(&result).expect("serializable result")
            );
            m.threads = exec.threads();
            m.input("hyps", &a.hyps);
            m.input("refs", &a.refs);
            if let Some(c) = &a.ckpt {
                m.input("ckpt", c);
            }
            m.output("eval", &a.out);
        }
        Command::FewShot(a) => {
            let ckpt = checkpoint::load(&a.ckpt)?;
            let base = TrainConfig {
                model: ckpt.config.model.clone(),
                ..TrainConfig::desk(EncoderKind::Graph, 0)
            };
            let config = resolve_config(base, None, &a.train_flags, given)?;
            let specs: Vec<SampleSpec> = if a.counts.is_empty() {
                a.fractions
                    .iter()
                    .map(|&f| SampleSpec::Fraction(f))
                    .collect()
            } else {
                a.counts.iter().map(|&c| SampleSpec::Count(c)).collect()
            };
            let pretrain_corpus = read_pairs(&a.pretrain_data)?;
            let train = read_pairs(&a.train)?;
            let val = read_optional_pairs(a.val.as_ref())?;
            let test = read_pairs(&a.test)?;
            let exec = ThreadExecutor::new(a.train_flags.threads);
            let data = Downstream {
                train: &train,
                val: &val,
                test: &test,
            };
            let report = training::run_transfer_experiment(
                &pretrain_corpus,
                &ckpt,
                data,
                &specs,
                &a.seeds,
                &config,
                a.target_bleu,
                &exec,
            )?;
            let tsv = a.out.with_extension("tsv");
            io::write_json(&a.out, &report)?;
            io::write_atomic(&tsv, transfer_tsv(&report).as_bytes())?;
            print!("{}", transfer_tsv(&report));
            m.config = serde_json::json!({
                "train": config,
                "specs": specs,
                "seeds": a.seeds,
                "target_bleu": a.target_bleu,
            });
            m.seed = Some(config.seed);
            m.threads = exec.threads();
            for (role, p) in [
                ("ckpt", &a.ckpt),
                ("pretrain_data", &a.pretrain_data),
                ("train", &a.train),
                ("test", &a.test),
            ] {
                m.input(role, p);
            }
            if let Some(v) = &a.val {
                m.input("val", v);
            }
            m.output("report", &a.out);
            m.output("table", &tsv);
        }
        Command::ZeroShot(a) => {
            let ckpt = checkpoint::load(&a.ckpt)?;
            let zero = TrainConfig {
                epochs: 0,
                ..ckpt.config.clone()
            };
            let exec = ThreadExecutor::new(a.decode.threads);
            let vocab = ckpt.vocab.clone();
            let ckpt =
                training::finetune(&ckpt, &vocab, &[], &[], &zero, &exec, &mut |_| {})?.checkpoint;
            let refs = read_pairs(&a.data)?;
            let records = unique_records(refs.iter().map(|p| p.record.clone()).collect());
            let hyps =
                generate_hypotheses(&ckpt, &records, a.decode.mode()?, a.decode.max_len, &exec)?;
            let result = score(&hyps, &refs, Some(&ckpt), &exec)?;
            io::write_json(&a.out, &result)?;
            if let Some(p) = &a.hyps {
                io::write_jsonl(p, &hyps)?;
                m.output("hypotheses", p);
            }
            println!(
                "{}",
                serde_json::to_string(&result).expect("serializable result")
            );
            m.config = serde_json::json!({ "beam": a.decode.beam, "max_len": a.decode.max_len });
            m.threads = exec.threads();
            m.input("ckpt", &a.ckpt);
            m.input("data", &a.data);
            m.output("eval", &a.out);
        }
        Command::GradCheck(a) => {
            let results = gradsuite::run_all(a.seed)?;
            for r in &results {
                println!(
                    "{:<40} {:.3e}  {}",
                    r.name,
                    r.max_rel_error,
                    if r.passed() { "ok" } else { "FAIL" }
                );
            }
            let failed = results.iter().filter(|r| !r.passed()).count();
            m.config = serde_json::json!({ "tolerance": gradsuite::TOLERANCE });
            m.seed = Some(a.seed);
            if let Some(p) = &a.out {
                let rows: Vec<Value> = results
                    .iter()
                    .map(|r| serde_json::json!({ "name": r.name, "max_rel_error": r.max_rel_error, "passed": r.passed() }))
                    .collect();
                io::write_json(p, &rows)?;
                m.output("report", p);
            }
            if failed > 0 {
                m.write_all()?;
                return Err(CliError::GradCheckFailed {
                    failed,
                    total: results.len(),
                });
            }
        }
        Command::SynthData(a) => {
            let family = match a.family {
                FamilyArg::A => Family::A,
                FamilyArg::B => Family::B,
            };
            let pairs = synth::generate(family, a.count, a.seed);
            io::write_jsonl(&a.out, &pairs)?;
            m.config = serde_json::json!({ "family": family, "count": a.count });
            m.seed = Some(a.seed);
            m.output("pairs", &a.out);
        }
    }
    Ok(())
}

fn record_training(
    m: &mut RunManifest,
    config: &TrainConfig,
    threads: usize,
    train: &Path,
    val: Option<&PathBuf>,
    out: &Path,
    log: &Path,
) {
    m.config = serde_json::to_value(config).expect("serializable config");
    m.seed = Some(config.seed);
    m.threads = threads;
    m.input("train", train);
    if let Some(v) = val {
        m.input("val", v);
    }
    m.output("checkpoint", out);
    m.output("metrics", log);
}

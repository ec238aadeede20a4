//! Model configuration, parameter layout and the layer building blocks
//! shared by the encoders and the decoder.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::{NumericsError, ParamId, ParamSet, Real, Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Graph,
    #[serde(rename = "seq")]
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    pub max_entities: usize,
    pub max_triples: usize,
    pub max_input_tokens: usize,
    pub max_target_tokens: usize,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            max_entities: 8,
            max_triples: 8,
            max_input_tokens: 256,
            max_target_tokens: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub vocab_size: usize,
    pub hidden: usize,
    /// Graph rounds (four stages each) or transformer blocks.
    pub layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn: usize,
    pub activation: Activation,
    pub copy: bool,
    pub copy_loss: bool,
    pub copy_loss_weight: f64,
    pub scale_graph_attention: bool,
    pub scale_copy: bool,
    pub entity_order_embedding: bool,
    pub caps: Caps,
}

impl ModelConfig {
    pub fn desk(encoder: EncoderKind, vocab_size: usize) -> Self {
        Self {
            encoder,
            vocab_size,
            hidden: 128,
            layers: 2,
            decoder_layers: 2,
            heads: 4,
            ffn: 512,
            activation: Activation::Relu,
            copy: true,
            copy_loss: true,
            copy_loss_weight: 1.0,
            scale_graph_attention: false,
            scale_copy: false,
            entity_order_embedding: true,
            caps: Caps::default(),
        }
    }

    /// Reference sizes of the full-scale setup; not a default.
    pub fn full_scale(encoder: EncoderKind, vocab_size: usize) -> Self {
        Self {
            hidden: 768,
            layers: 6,
            decoder_layers: 6,
            heads: 8,
            ffn: 3072,
            ..Self::desk(encoder, vocab_size)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return bad(format!(
                "hidden {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            ));
        }
        if self.layers == 0 || self.decoder_layers == 0 || self.ffn == 0 {
            return bad("layers, decoder_layers and ffn must be positive".into());
        }
        if self.vocab_size <= crate::tokenizer::BASE_VOCAB {
            return bad(format!("vocab_size {} too small", self.vocab_size));
        }
        let c = &self.caps;
        if c.max_entities == 0
            || c.max_triples == 0
            || c.max_input_tokens == 0
            || c.max_target_tokens < 2
        {
            return bad("caps must be positive".into());
        }
        if !(self.copy_loss_weight >= 0.0) {
            return bad("copy_loss_weight must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("record exceeds caps: {0}")]
    CapsExceeded(String),
    #[error("encoder output is empty")]
    EmptyEncoderOutput,
    #[error("empty batch")]
    EmptyBatch,
    #[error("parameters do not match the configuration: {0}")]
    LayoutMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: Option<ParamId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphStageIds {
    pub attn: AttnIds,
    pub ffn: FfnIds,
    pub norm: NormIds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeqLayerIds {
    pub attn: AttnIds,
    pub norm1: NormIds,
    pub ffn: FfnIds,
    pub norm2: NormIds,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderIds {
    Graph {
        entity_order: Option<ParamId>,
        rounds: Vec<[GraphStageIds; 4]>,
    },
    Sequence {
        position: ParamId,
        entity: ParamId,
        triple: ParamId,
        property: ParamId,
        layers: Vec<SeqLayerIds>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecLayerIds {
    pub self_attn: AttnIds,
    pub norm1: NormIds,
    pub cross: AttnIds,
    pub norm2: NormIds,
    pub ffn: FfnIds,
    pub norm3: NormIds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

/// Where each named parameter lives in the [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub token_embedding: ParamId,
    pub encoder: EncoderIds,
    pub decoder_position: ParamId,
    pub decoder: Vec<DecLayerIds>,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub gate: Option<GateIds>,
}

enum Init {
    Normal,
    Zeros,
    Ones,
}

struct Builder<'a, T: Real> {
    params: ParamSet<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Real> Builder<'_, T> {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> ParamId {
        let t = match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::filled(shape, T::one()),
            Init::Normal => {
                let normal = Normal::new(0.0, INIT_STD).expect("valid std");
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| T::from_f64(normal.sample(self.rng)))
                    .collect();
                Tensor::new(shape, data).expect("shape")
            }
        };
        self.params.push(name, t)
    }

    fn attn(&mut self, prefix: &str, d: usize, with_out: bool) -> AttnIds {
        AttnIds {
            wq: self.add(format!("{prefix}.wq"), &[d, d], Init::Normal),
            wk: self.add(format!("{prefix}.wk"), &[d, d], Init::Normal),
            wv: self.add(format!("{prefix}.wv"), &[d, d], Init::Normal),
            wo: with_out.then(|| self.add(format!("{prefix}.wo"), &[d, d], Init::Normal)),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.add(format!("{prefix}.gain"), &[d], Init::Ones),
            bias: self.add(format!("{prefix}.bias"), &[d], Init::Zeros),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> FfnIds {
        FfnIds {
            w1: self.add(format!("{prefix}.w1"), &[d, f], Init::Normal),
            b1: self.add(format!("{prefix}.b1"), &[f], Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), &[f, d], Init::Normal),
            b2: self.add(format!("{prefix}.b2"), &[d], Init::Zeros),
        }
    }
}

impl Layout {
    /// Creates the parameters for `config`, drawing weights from `seed`.
    pub fn init<T: Real>(
        config: &ModelConfig,
        seed: u64,
    ) -> Result<(Layout, ParamSet<T>), ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut b = Builder {
            params: ParamSet::new(),
            rng: &mut rng,
        };
        let (d, f, v) = (config.hidden, config.ffn, config.vocab_size);
        let caps = &config.caps;
        let token_embedding = b.add("embed.token".into(), &[v, d], Init::Normal);
        let encoder = match config.encoder {
            EncoderKind::Graph => {
                let entity_order = config.entity_order_embedding.then(|| {
                    b.add(
                        "enc.entity_order".into(),
                        &[caps.max_entities, d],
                        Init::Normal,
                    )
                });
                let rounds = (0..config.layers)
                    .map(|r| {
                        core::array::from_fn(|s| {
                            let p = format!("enc.round{r}.stage{}", s + 1);
                            GraphStageIds {
                                attn: b.attn(&format!("{p}.attn"), d, false),
                                ffn: b.ffn(&format!("{p}.mlp"), d, f),
                                norm: b.norm(&format!("{p}.norm"), d),
                            }
                        })
                    })
                    .collect();
                EncoderIds::Graph {
                    entity_order,
                    rounds,
                }
            }
            EncoderKind::Sequence => {
                let position = b.add(
                    "enc.position".into(),
                    &[caps.max_input_tokens, d],
                    Init::Normal,
                );
                let entity = b.add("enc.entity".into(), &[caps.max_entities, d], Init::Normal);
                let triple = b.add(
                    "enc.triple".into(),
                    &[caps.max_triples + 1, d],
                    Init::Normal,
                );
                let property = b.add("enc.property".into(), &[3, d], Init::Normal);
                let layers = (0..config.layers)
                    .map(|l| {
                        let p = format!("enc.layer{l}");
                        SeqLayerIds {
                            attn: b.attn(&format!("{p}.attn"), d, true),
                            norm1: b.norm(&format!("{p}.norm1"), d),
                            ffn: b.ffn(&format!("{p}.ffn"), d, f),
                            norm2: b.norm(&format!("{p}.norm2"), d),
                        }
                    })
                    .collect();
                EncoderIds::Sequence {
                    position,
                    entity,
                    triple,
                    property,
                    layers,
                }
            }
        };
        let decoder_position = b.add(
            "dec.position".into(),
            &[caps.max_target_tokens, d],
            Init::Normal,
        );
        let decoder = (0..config.decoder_layers)
            .map(|l| {
                let p = format!("dec.layer{l}");
                DecLayerIds {
                    self_attn: b.attn(&format!("{p}.self"), d, true),
                    norm1: b.norm(&format!("{p}.norm1"), d),
                    cross: b.attn(&format!("{p}.cross"), d, true),
                    norm2: b.norm(&format!("{p}.norm2"), d),
                    ffn: b.ffn(&format!("{p}.ffn"), d, f),
                    norm3: b.norm(&format!("{p}.norm3"), d),
                }
            })
            .collect();
        let out_w = b.add("out.w".into(), &[d, v], Init::Normal);
        let out_b = b.add("out.b".into(), &[v], Init::Zeros);
        let gate = config.copy.then(|| GateIds {
            w1: b.add("gate.w1".into(), &[d, d], Init::Normal),
            b1: b.add("gate.b1".into(), &[d], Init::Zeros),
            w2: b.add("gate.w2".into(), &[d, 1], Init::Normal),
            b2: b.add("gate.b2".into(), &[1], Init::Zeros),
        });
        let params = b.params;
        Ok((
            Layout {
                token_embedding,
                encoder,
                decoder_position,
                decoder,
                out_w,
                out_b,
                gate,
            },
            params,
        ))
    }
}

/// Configuration, layout and parameter values together.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub layout: Layout,
    pub params: ParamSet<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let (layout, params) = Layout::init(&config, seed)?;
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    /// Wraps existing parameter values, checking names and shapes against
    /// the layout implied by `config`.
    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self, ModelError> {
        let (layout, fresh) = Layout::init::<T>(&config, 0)?;
        if !fresh.same_layout(&params) || fresh.len() != params.len() {
            return Err(ModelError::LayoutMismatch(format!(
                "expected {} tensors, got {}",
                fresh.len(),
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }
}

pub(crate) fn linear<T: Real>(
    tape: &mut Tape<'_, T>,
    x: Var,
    w: ParamId,
    b: Option<ParamId>,
) -> Result<Var, ModelError> {
    let wv = tape.param(w);
    let y = tape.matmul(x, wv)?;
    Ok(match b {
        Some(b) => {
            let bv = tape.param(b);
            tape.add_row(y, bv)?
        }
        None => y,
    })
}

pub(crate) fn norm<T: Real>(
    tape: &mut Tape<'_, T>,
    x: Var,
    ids: &NormIds,
) -> Result<Var, ModelError> {
    let n = tape.layer_norm(x);
    let g = tape.param(ids.gain);
    let b = tape.param(ids.bias);
    let y = tape.mul_row(n, g)?;
    Ok(tape.add_row(y, b)?)
}

pub(crate) fn activate<T: Real>(tape: &mut Tape<'_, T>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Gelu => tape.gelu(x),
    }
}

pub(crate) fn ffn<T: Real>(
    tape: &mut Tape<'_, T>,
    x: Var,
    ids: &FfnIds,
    act: Activation,
) -> Result<Var, ModelError> {
    let h = linear(tape, x, ids.w1, Some(ids.b1))?;
    let h = activate(tape, h, act);
    linear(tape, h, ids.w2, Some(ids.b2))
}

/// Multi-head attention of `q` rows over `k`/`v` rows, heads split by
/// columns. `blocked[i * m + j]` hides key `j` from query `i`.
pub(crate) fn attend<T: Real>(
    tape: &mut Tape<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    scale: Option<T>,
    blocked: Option<&[bool]>,
) -> Result<Var, ModelError> {
    Ok(attend_weights(
        tape, q, k, v, heads, scale, blocked, &mut None,
    )?)
}

/// [`attend`], also collecting each head's attention matrix when `weights`
/// is `Some`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend_weights<T: Real>(
    tape: &mut Tape<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
    scale: Option<T>,
    blocked: Option<&[bool]>,
    weights: &mut Option<Vec<Var>>,
) -> Result<Var, ModelError> {
    let d = tape.value(q).cols();
    let dh = d / heads;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, dh)?,
                tape.slice_cols(k, h * dh, dh)?,
                tape.slice_cols(v, h * dh, dh)?,
            )
        };
        let mut s = tape.matmul_nt(qh, kh)?;
        if let Some(c) = scale {
            s = tape.scale(s, c);
        }
        if let Some(mask) = blocked {
            s = tape.masked_fill(s, mask.to_vec(), T::neg_infinity())?;
        }
        let a = tape.softmax(s);
        if let Some(w) = weights {
            w.push(a);
        }
        outs.push(tape.matmul(a, vh)?);
    }
    if outs.len() == 1 {
        return Ok(outs[0]);
    }
    Ok(tape.concat_cols(&outs)?)
}

//! The two input encoders: hierarchical graph attention over
//! `[ENT]`/`[TRIPLE]`/leaf nodes, and a transformer over the linearized
//! record with entity, triple and property embeddings.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::model::{
    attend_weights, ffn, linear, norm, EncoderIds, GraphStageIds, Model, ModelConfig, ModelError,
    SeqLayerIds,
};
use crate::numerics::{Real, Tape, Tensor, Var};
use crate::record::KnowledgeRecord;
use crate::tokenizer::{self, SubwordVocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Subject,
    Predicate,
    Object,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Ent,
    Triple,
    Leaf(Role),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub kind: NodeKind,
    pub entity: usize,
    /// Triple index within the entity; `None` for `[ENT]` nodes.
    pub triple: Option<usize>,
    /// Surface text for leaves, empty for pseudo nodes.
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphStructure {
    pub nodes: Vec<GraphNode>,
    /// Directed `(src, dst)` edges for each of the four propagation stages.
    pub stages: [Vec<(usize, usize)>; 4],
}

impl GraphStructure {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `blocked[i * n + j]` is true unless `j → i` is an edge of `stage`.
    pub fn blocked(&self, stage: usize) -> Vec<bool> {
        let n = self.nodes.len();
        let mut m = vec![true; n * n];
        for &(src, dst) in &self.stages[stage] {
            m[dst * n + src] = false;
        }
        m
    }

    /// Destination and source nodes of `stage`, each ascending.
    pub fn stage_nodes(&self, stage: usize) -> (Vec<usize>, Vec<usize>) {
        let dst: BTreeSet<usize> = self.stages[stage].iter().map(|e| e.1).collect();
        let src: BTreeSet<usize> = self.stages[stage].iter().map(|e| e.0).collect();
        (dst.into_iter().collect(), src.into_iter().collect())
    }

    /// In-neighbours of `node` at `stage`.
    pub fn neighbours(&self, stage: usize, node: usize) -> Vec<usize> {
        self.stages[stage]
            .iter()
            .filter(|e| e.1 == node)
            .map(|e| e.0)
            .collect()
    }
}

fn check_caps(record: &KnowledgeRecord, config: &ModelConfig) -> Result<(), ModelError> {
    let caps = &config.caps;
    if record.entities.len() > caps.max_entities {
        return Err(ModelError::CapsExceeded(format!(
            "{} entities > {}",
            record.entities.len(),
            caps.max_entities
        )));
    }
    if let Some(e) = record
        .entities
        .iter()
        .find(|e| e.triples.len() > caps.max_triples)
    {
        return Err(ModelError::CapsExceeded(format!(
            "{} has {} triples > {}",
            e.subject,
            e.triples.len(),
            caps.max_triples
        )));
    }
    Ok(())
}

/// Drops entities and triples beyond the caps. Returns whether anything
/// was removed.
pub fn truncate_to_caps(record: &KnowledgeRecord, config: &ModelConfig) -> (KnowledgeRecord, bool) {
    let caps = &config.caps;
    let mut out = record.clone();
    let mut cut = out.entities.len() > caps.max_entities;
    out.entities.truncate(caps.max_entities);
    for e in &mut out.entities {
        cut |= e.triples.len() > caps.max_triples;
        e.triples.truncate(caps.max_triples);
    }
    (out, cut)
}

/// Node order per entity: `[ENT]`, then for each triple `[TRIPLE]`
/// followed by its subject, predicate and object leaves.
pub fn build_graph(
    record: &KnowledgeRecord,
    config: &ModelConfig,
) -> Result<GraphStructure, ModelError> {
    check_caps(record, config)?;
    let mut nodes = Vec::new();
    let mut stages: [Vec<(usize, usize)>; 4] = Default::default();
    let mut ents = Vec::new();
    for (ei, e) in record.entities.iter().enumerate() {
        let ent = nodes.len();
        ents.push(ent);
        nodes.push(GraphNode {
            kind: NodeKind::Ent,
            entity: ei,
            triple: None,
            surface: String::new(),
        });
        for (ti, (p, o)) in e.triples.iter().enumerate() {
            let tri = nodes.len();
            nodes.push(GraphNode {
                kind: NodeKind::Triple,
                entity: ei,
                triple: Some(ti),
                surface: String::new(),
            });
            let leaves = [
                (Role::Subject, &e.subject),
                (Role::Predicate, p),
                (Role::Object, o),
            ];
            let first = nodes.len();
            for (role, s) in leaves {
                nodes.push(GraphNode {
                    kind: NodeKind::Leaf(role),
                    entity: ei,
                    triple: Some(ti),
                    surface: s.clone(),
                });
            }
            for a in first..first + 3 {
                for b in first..first + 3 {
                    if a != b {
                        stages[0].push((a, b));
                    }
                }
                stages[1].push((a, tri));
            }
            stages[2].push((tri, ent));
        }
    }
    for &a in &ents {
        for &b in &ents {
            if a != b {
                stages[3].push((a, b));
            }
        }
    }
    Ok(GraphStructure { nodes, stages })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Property {
    S = 0,
    P = 1,
    O = 2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearizedInput {
    pub tokens: Vec<u32>,
    pub entity: Vec<usize>,
    /// 0 for subject tokens, `j ≥ 1` for tokens of the entity's j-th triple.
    pub triple: Vec<usize>,
    pub property: Vec<Property>,
    pub position: Vec<usize>,
    pub truncated: bool,
}

impl LinearizedInput {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Subword ids of a record field or target text. Fields are encoded with a
/// leading space so they share subwords with mid-sentence occurrences.
pub fn encode_field(vocab: &SubwordVocab, s: &str) -> Vec<u32> {
    let mut text = String::with_capacity(s.len() + 1);
    text.push(' ');
    text.push_str(s);
    vocab.encode(&text)
}

/// Per entity: subject subwords once, then each triple's predicate and
/// object subwords. Stops at the caps and flags the cut.
pub fn linearize(
    record: &KnowledgeRecord,
    vocab: &SubwordVocab,
    config: &ModelConfig,
) -> LinearizedInput {
    let caps = &config.caps;
    let mut lin = LinearizedInput {
        tokens: Vec::new(),
        entity: Vec::new(),
        triple: Vec::new(),
        property: Vec::new(),
        position: Vec::new(),
        truncated: record.entities.len() > caps.max_entities,
    };
    let push = |lin: &mut LinearizedInput, ids: Vec<u32>, e: usize, t: usize, p: Property| {
        for id in ids {
            if lin.tokens.len() == caps.max_input_tokens {
                lin.truncated = true;
                return;
            }
            lin.position.push(lin.tokens.len());
            lin.tokens.push(id);
            lin.entity.push(e);
            lin.triple.push(t);
            lin.property.push(p);
        }
    };
    for (ei, e) in record.entities.iter().take(caps.max_entities).enumerate() {
        push(
            &mut lin,
            encode_field(vocab, &e.subject),
            ei,
            0,
            Property::S,
        );
        lin.truncated |= e.triples.len() > caps.max_triples;
        for (ti, (p, o)) in e.triples.iter().take(caps.max_triples).enumerate() {
            push(&mut lin, encode_field(vocab, p), ei, ti + 1, Property::P);
            push(&mut lin, encode_field(vocab, o), ei, ti + 1, Property::O);
        }
    }
    lin
}

/// Everything either encoder needs from one record, tokenized once.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceInput {
    pub graph: GraphStructure,
    /// Subword ids of each graph node's surface (empty for pseudo nodes).
    pub node_ids: Vec<Vec<u32>>,
    pub linear: LinearizedInput,
}

pub fn prepare_source(
    record: &KnowledgeRecord,
    vocab: &SubwordVocab,
    config: &ModelConfig,
) -> Result<SourceInput, ModelError> {
    let (record, _) = truncate_to_caps(record, config);
    let graph = build_graph(&record, config)?;
    let node_ids = graph
        .nodes
        .iter()
        .map(|n| match n.kind {
            NodeKind::Leaf(_) => encode_field(vocab, &n.surface),
            _ => Vec::new(),
        })
        .collect();
    let linear = linearize(&record, vocab, config);
    if graph.is_empty() || linear.is_empty() {
        return Err(ModelError::EmptyEncoderOutput);
    }
    Ok(SourceInput {
        graph,
        node_ids,
        linear,
    })
}

/// Encoder states on a tape.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `[n, D]`: all node or token states, the cross-attention memory.
    pub g: Var,
    /// `[m, D]`: one row per copyable input subword.
    pub copy: Var,
    pub copy_ids: Vec<u32>,
}

/// Leaf rows average their subword embeddings; `[ENT]` and `[TRIPLE]` rows
/// take the marker token embeddings.
pub fn init_node_embeddings<T: Real>(
    tape: &mut Tape<'_, T>,
    graph: &GraphStructure,
    node_ids: &[Vec<u32>],
    table: Var,
) -> Result<Var, ModelError> {
    let mut ids = Vec::new();
    let mut spans = Vec::with_capacity(graph.len());
    for (node, sub) in graph.nodes.iter().zip(node_ids) {
        let start = ids.len();
        match node.kind {
            NodeKind::Ent => ids.push(tokenizer::ENT as usize),
            NodeKind::Triple => ids.push(tokenizer::TRIPLE as usize),
            NodeKind::Leaf(_) if sub.is_empty() => ids.push(tokenizer::UNK as usize),
            NodeKind::Leaf(_) => ids.extend(sub.iter().map(|&i| i as usize)),
        }
        spans.push((start, ids.len()));
    }
    let rows = tape.gather(table, &ids)?;
    let mut avg = vec![T::zero(); graph.len() * ids.len()];
    for (i, &(s, e)) in spans.iter().enumerate() {
        let w = T::one() / T::from_f64((e - s) as f64);
        avg[i * ids.len() + s..i * ids.len() + e]
            .iter_mut()
            .for_each(|x| *x = w);
    }
    let avg = tape.constant(Tensor::from_rows(graph.len(), ids.len(), avg)?);
    Ok(tape.matmul(avg, rows)?)
}

/// One propagation stage. Nodes without in-edges at `stage` keep their
/// input row. Per-head attention matrices (destination rows by source
/// columns, see [`GraphStructure::stage_nodes`]) are pushed to `weights`
/// if given.
pub fn graph_stage<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    graph: &GraphStructure,
    round: usize,
    stage: usize,
    x: Var,
    weights: &mut Option<Vec<Var>>,
) -> Result<Var, ModelError> {
    let EncoderIds::Graph { rounds, .. } = &model.layout.encoder else {
        return Err(ModelError::InvalidConfig(
            "graph encoder on a sequence model".into(),
        ));
    };
    let ids: &GraphStageIds = &rounds[round][stage];
    let config = &model.config;
    let (dst, src) = graph.stage_nodes(stage);
    if dst.is_empty() {
        return Ok(x);
    }
    let xd = tape.gather(x, &dst)?;
    let xs = tape.gather(x, &src)?;
    let q = linear(tape, xd, ids.attn.wq, None)?;
    let k = linear(tape, xs, ids.attn.wk, None)?;
    let v = linear(tape, xs, ids.attn.wv, None)?;
    let scale = config
        .scale_graph_attention
        .then(|| T::from_f64(1.0 / Float::sqrt(config.hidden as f64)));
    let n = graph.len();
    let full = graph.blocked(stage);
    let blocked: Vec<bool> = dst
        .iter()
        .flat_map(|&i| src.iter().map(move |&j| (i, j)))
        .map(|(i, j)| full[i * n + j])
        .collect();
    let att = attend_weights(tape, q, k, v, config.heads, scale, Some(&blocked), weights)?;
    let res = tape.add(att, xd)?;
    let h = ffn(tape, res, &ids.ffn, config.activation)?;
    let y = norm(tape, h, &ids.norm)?;
    let mut pick: Vec<usize> = (0..n).collect();
    for (p, &i) in dst.iter().enumerate() {
        pick[i] = n + p;
    }
    let table = tape.concat_rows(&[x, y])?;
    Ok(tape.gather(table, &pick)?)
}

/// Runs the propagation rounds from initial node vectors `x0`.
pub fn graph_propagate<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    graph: &GraphStructure,
    x0: Var,
) -> Result<Var, ModelError> {
    let mut x = x0;
    for round in 0..model.config.layers {
        for stage in 0..4 {
            x = graph_stage(tape, model, graph, round, stage, x, &mut None)?;
        }
    }
    Ok(x)
}

pub fn graph_encode<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    src: &SourceInput,
) -> Result<EncoderOutput, ModelError> {
    let EncoderIds::Graph { entity_order, .. } = &model.layout.encoder else {
        return Err(ModelError::InvalidConfig(
            "graph encoder on a sequence model".into(),
        ));
    };
    let graph = &src.graph;
    let table = tape.param(model.layout.token_embedding);
    let mut x = init_node_embeddings(tape, graph, &src.node_ids, table)?;
    if let Some(order) = entity_order {
        let is_ent: Vec<bool> = graph
            .nodes
            .iter()
            .map(|n| n.kind == NodeKind::Ent)
            .collect();
        let idx: Vec<usize> = graph.nodes.iter().map(|n| n.entity).collect();
        let ot = tape.param(*order);
        let o = tape.gather(ot, &idx)?;
        let with = tape.add(x, o)?;
        x = tape.row_where(is_ent, with, x)?;
    }
    let g = graph_propagate(tape, model, graph, x)?;
    let mut rows = Vec::new();
    let mut copy_ids = Vec::new();
    for (i, sub) in src.node_ids.iter().enumerate() {
        if matches!(graph.nodes[i].kind, NodeKind::Leaf(_)) {
            rows.extend(core::iter::repeat(i).take(sub.len()));
            copy_ids.extend_from_slice(sub);
        }
    }
    if rows.is_empty() {
        return Err(ModelError::EmptyEncoderOutput);
    }
    let copy = tape.gather(g, &rows)?;
    Ok(EncoderOutput { g, copy, copy_ids })
}

fn seq_layer<T: Real>(
    tape: &mut Tape<'_, T>,
    x: Var,
    ids: &SeqLayerIds,
    config: &ModelConfig,
    weights: &mut Option<Vec<Var>>,
) -> Result<Var, ModelError> {
    let q = linear(tape, x, ids.attn.wq, None)?;
    let k = linear(tape, x, ids.attn.wk, None)?;
    let v = linear(tape, x, ids.attn.wv, None)?;
    let scale = Some(T::from_f64(1.0 / Float::sqrt(config.hidden as f64)));
    let att = attend_weights(tape, q, k, v, config.heads, scale, None, weights)?;
    let att = linear(
        tape,
        att,
        ids.attn
            .wo
            .expect("sequence attention has an output projection"),
        None,
    )?;
    let r = tape.add(x, att)?;
    let x = norm(tape, r, &ids.norm1)?;
    let f = ffn(tape, x, &ids.ffn, config.activation)?;
    let r = tape.add(x, f)?;
    norm(tape, r, &ids.norm2)
}

/// Summed token, position, entity, triple and property embeddings.
pub fn sequence_embed<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    lin: &LinearizedInput,
) -> Result<Var, ModelError> {
    let EncoderIds::Sequence {
        position,
        entity,
        triple,
        property,
        ..
    } = &model.layout.encoder
    else {
        return Err(ModelError::InvalidConfig(
            "sequence encoder on a graph model".into(),
        ));
    };
    if lin.is_empty() {
        return Err(ModelError::EmptyEncoderOutput);
    }
    let toks: Vec<usize> = lin.tokens.iter().map(|&t| t as usize).collect();
    let props: Vec<usize> = lin.property.iter().map(|&p| p as usize).collect();
    let mut x = {
        let t = tape.param(model.layout.token_embedding);
        tape.gather(t, &toks)?
    };
    for (table, idx) in [
        (*position, &lin.position),
        (*entity, &lin.entity),
        (*triple, &lin.triple),
        (*property, &props),
    ] {
        let t = tape.param(table);
        let e = tape.gather(t, idx)?;
        x = tape.add(x, e)?;
    }
    Ok(x)
}

pub fn sequence_encode<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    lin: &LinearizedInput,
) -> Result<EncoderOutput, ModelError> {
    sequence_encode_weights(tape, model, lin, &mut None)
}

/// [`sequence_encode`], also collecting every layer's attention matrices.
pub fn sequence_encode_weights<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    lin: &LinearizedInput,
    weights: &mut Option<Vec<Var>>,
) -> Result<EncoderOutput, ModelError> {
    let EncoderIds::Sequence { layers, .. } = &model.layout.encoder else {
        return Err(ModelError::InvalidConfig(
            "sequence encoder on a graph model".into(),
        ));
    };
    let mut x = sequence_embed(tape, model, lin)?;
    for ids in layers {
        x = seq_layer(tape, x, ids, &model.config, weights)?;
    }
    Ok(EncoderOutput {
        g: x,
        copy: x,
        copy_ids: lin.tokens.clone(),
    })
}

/// Dispatches on the configured encoder kind.
pub fn encode<T: Real>(
    tape: &mut Tape<'_, T>,
    model: &Model<T>,
    src: &SourceInput,
) -> Result<EncoderOutput, ModelError> {
    match model.layout.encoder {
        EncoderIds::Graph { .. } => graph_encode(tape, model, src),
        EncoderIds::Sequence { .. } => sequence_encode(tape, model, &src.linear),
    }
}

#[cfg(test)]
mod tests;

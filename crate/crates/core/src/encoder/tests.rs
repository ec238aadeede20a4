use super::*;
use crate::model::{EncoderKind, ModelConfig};
use crate::numerics::ParamSet;
use crate::record::{Entity, KnowledgeRecord};
use alloc::collections::BTreeSet;
use alloc::string::ToString;
use proptest::prelude::*;

fn record(shape: &[usize]) -> KnowledgeRecord {
    let entities = shape
        .iter()
        .enumerate()
        .map(|(e, &n)| {
            let mut ent = Entity::new(alloc::format!("e{e}"));
            for t in 0..n {
                ent.push(alloc::format!("p{t}"), alloc::format!("o{e}{t}"));
            }
            ent
        })
        .collect();
    KnowledgeRecord {
        id: "r".to_string(),
        entities,
    }
}

fn tiny(kind: EncoderKind) -> ModelConfig {
    let mut c = ModelConfig::desk(kind, 300);
    c.hidden = 8;
    c.heads = 2;
    c.ffn = 12;
    c.layers = 1;
    c.decoder_layers = 1;
    c
}

type Mat = Vec<Vec<f64>>;

fn to_mat(t: &Tensor<f64>) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

fn mm(a: &Mat, b: &Tensor<f64>) -> Mat {
    a.iter()
        .map(|r| {
            (0..b.cols())
                .map(|j| r.iter().enumerate().map(|(k, &x)| x * b.get(k, j)).sum())
                .collect()
        })
        .collect()
}

fn add_bias(a: &mut Mat, b: &Tensor<f64>) {
    for r in a.iter_mut() {
        for (x, &v) in r.iter_mut().zip(b.data()) {
            *x += v;
        }
    }
}

fn dense_ffn(x: &Mat, p: &ParamSet<f64>, ids: &crate::model::FfnIds) -> Mat {
    let mut h = mm(x, p.get(ids.w1));
    add_bias(&mut h, p.get(ids.b1));
    h.iter_mut().flatten().for_each(|v| *v = v.max(0.0));
    let mut y = mm(&h, p.get(ids.w2));
    add_bias(&mut y, p.get(ids.b2));
    y
}

fn dense_norm(x: &Mat, p: &ParamSet<f64>, ids: &crate::model::NormIds) -> Mat {
    x.iter()
        .map(|r| {
            let n = r.len() as f64;
            let mean = r.iter().sum::<f64>() / n;
            let var = r.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            r.iter()
                .enumerate()
                .map(|(i, v)| {
                    (v - mean) / (var + 1e-5).sqrt() * p.get(ids.gain).data()[i]
                        + p.get(ids.bias).data()[i]
                })
                .collect()
        })
        .collect()
}

/// Per-head attention with an explicit allowed-neighbour predicate.
fn dense_attention(
    q: &Mat,
    k: &Mat,
    v: &Mat,
    heads: usize,
    scale: f64,
    allowed: impl Fn(usize, usize) -> bool,
) -> Mat {
    let d = q[0].len();
    let dh = d / heads;
    let mut out = vec![vec![0.0; d]; q.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..q.len() {
            let js: Vec<usize> = (0..k.len()).filter(|&j| allowed(i, j)).collect();
            if js.is_empty() {
                continue;
            }
            let s: Vec<f64> = js
                .iter()
                .map(|&j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() * scale)
                .collect();
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|x| (x - max).exp()).sum();
            for (&j, sj) in js.iter().zip(&s) {
                let a = (sj - max).exp() / z;
                for c in cols.clone() {
                    out[i][c] += a * v[j][c];
                }
            }
        }
    }
    out
}

#[test]
fn nine_node_graph() {
    let c = tiny(EncoderKind::Graph);
    let g = build_graph(&record(&[2]), &c).unwrap();
    assert_eq!(g.len(), 9);
    let first_triple: BTreeSet<(usize, usize)> = g.stages[0]
        .iter()
        .copied()
        .filter(|&(a, _)| a < 5)
        .collect();
    let expected: BTreeSet<(usize, usize)> = [(2, 3), (2, 4), (3, 2), (3, 4), (4, 2), (4, 3)]
        .into_iter()
        .collect();
    assert_eq!(first_triple, expected);
    assert!(g.stages[3].is_empty());
}

#[test]
fn caps_are_enforced() {
    let mut c = tiny(EncoderKind::Graph);
    c.caps.max_triples = 1;
    assert!(matches!(
        build_graph(&record(&[2]), &c),
        Err(ModelError::CapsExceeded(_))
    ));
    let (r, cut) = truncate_to_caps(&record(&[2]), &c);
    assert!(cut);
    assert_eq!(build_graph(&r, &c).unwrap().len(), 5);
}

fn oracle_edges(g: &GraphStructure, stage: usize) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for (a, na) in g.nodes.iter().enumerate() {
        for (b, nb) in g.nodes.iter().enumerate() {
            let same_entity = na.entity == nb.entity;
            let same_triple = same_entity && na.triple.is_some() && na.triple == nb.triple;
            let leaf = |n: &GraphNode| matches!(n.kind, NodeKind::Leaf(_));
            let edge = match stage {
                0 => leaf(na) && leaf(nb) && same_triple && a != b,
                1 => leaf(na) && nb.kind == NodeKind::Triple && same_triple,
                2 => na.kind == NodeKind::Triple && nb.kind == NodeKind::Ent && same_entity,
                _ => na.kind == NodeKind::Ent && nb.kind == NodeKind::Ent && a != b,
            };
            if edge {
                out.insert((a, b));
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn adjacency_matches_brute_force(shape in prop::collection::vec(0usize..4, 1..5)) {
        let c = tiny(EncoderKind::Graph);
        let g = build_graph(&record(&shape), &c).unwrap();
        let ents = shape.len();
        let triples: usize = shape.iter().sum();
        prop_assert_eq!(g.len(), ents + triples * 4);
        for stage in 0..4 {
            let got: BTreeSet<(usize, usize)> = g.stages[stage].iter().copied().collect();
            prop_assert_eq!(got.len(), g.stages[stage].len());
            prop_assert_eq!(got, oracle_edges(&g, stage));
        }
    }

    #[test]
    fn leaf_init_is_subword_mean(ids in prop::collection::vec(7u32..263, 1..6), seed in 0u64..1000) {
        let c = tiny(EncoderKind::Graph);
        let model = Model::<f64>::new(c, seed).unwrap();
        let g = build_graph(&record(&[1]), &model.config).unwrap();
        let node_ids = vec![vec![], vec![], ids.clone(), vec![9], vec![]];
        let mut tape = Tape::with_params(&model.params);
        let table = tape.param(model.layout.token_embedding);
        let x = init_node_embeddings(&mut tape, &g, &node_ids, table).unwrap();
        let x = tape.value(x);
        let e = model.params.get(model.layout.token_embedding);
        for col in 0..8 {
            let mean = ids.iter().map(|&i| e.get(i as usize, col)).sum::<f64>() / ids.len() as f64;
            prop_assert!((x.get(2, col) - mean).abs() < 1e-12);
            prop_assert_eq!(x.get(3, col), e.get(9, col));
            prop_assert_eq!(x.get(0, col), e.get(tokenizer::ENT as usize, col));
            prop_assert_eq!(x.get(1, col), e.get(tokenizer::TRIPLE as usize, col));
            prop_assert_eq!(x.get(4, col), e.get(tokenizer::UNK as usize, col));
        }
    }
}

#[test]
fn two_subword_leaf_is_pair_mean() {
    let model = Model::<f64>::new(tiny(EncoderKind::Graph), 1).unwrap();
    let g = build_graph(&record(&[1]), &model.config).unwrap();
    let node_ids = vec![vec![], vec![], vec![40, 50], vec![60], vec![70]];
    let mut tape = Tape::with_params(&model.params);
    let table = tape.param(model.layout.token_embedding);
    let x = init_node_embeddings(&mut tape, &g, &node_ids, table).unwrap();
    let e = model.params.get(model.layout.token_embedding);
    for col in 0..8 {
        assert!(
            (tape.value(x).get(2, col) - (e.get(40, col) + e.get(50, col)) / 2.0).abs() < 1e-15
        );
        assert_eq!(tape.value(x).get(3, col), e.get(60, col));
    }
}

fn random_input(tape: &mut Tape<'_, f64>, n: usize, d: usize, seed: u64) -> Var {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    tape.input(Tensor::from_rows(n, d, data).unwrap())
}

#[test]
fn attention_respects_neighbourhoods() {
    let model = Model::<f64>::new(tiny(EncoderKind::Graph), 5).unwrap();
    let g = build_graph(&record(&[1, 2, 3]), &model.config).unwrap();
    let n = g.len();
    for stage in 0..4 {
        let mut tape = Tape::with_params(&model.params);
        let x = random_input(&mut tape, n, 8, stage as u64);
        let mut weights = Some(Vec::new());
        graph_stage(&mut tape, &model, &g, 0, stage, x, &mut weights).unwrap();
        let weights = weights.unwrap();
        assert_eq!(weights.len(), 2);
        let (dst, src) = g.stage_nodes(stage);
        for w in weights {
            let a = tape.value(w);
            assert_eq!((a.rows(), a.cols()), (dst.len(), src.len()));
            for (r, &i) in dst.iter().enumerate() {
                let nb = g.neighbours(stage, i);
                let mass: f64 = src
                    .iter()
                    .enumerate()
                    .filter(|(_, j)| nb.contains(j))
                    .map(|(c, _)| a.get(r, c))
                    .sum();
                for (c, j) in src.iter().enumerate() {
                    if !nb.contains(j) {
                        assert_eq!(a.get(r, c), 0.0);
                    } else if nb.len() == 1 {
                        assert_eq!(a.get(r, c), 1.0);
                    }
                }
                assert!((mass - 1.0).abs() < 1e-12);
            }
        }
    }
    // the single-triple entity's [ENT] has exactly one in-neighbour at stage 3
    assert_eq!(g.neighbours(2, 0), vec![1]);
}

#[test]
fn nine_node_graph_matches_dense_reference() {
    let mut c = tiny(EncoderKind::Graph);
    c.layers = 2;
    c.entity_order_embedding = false;
    let model = Model::<f64>::new(c, 11).unwrap();
    let g = build_graph(&record(&[2]), &model.config).unwrap();
    let p = &model.params;
    let mut tape = Tape::with_params(p);
    let x0 = random_input(&mut tape, 9, 8, 42);
    let start = to_mat(tape.value(x0));
    let out = graph_propagate(&mut tape, &model, &g, x0).unwrap();

    let EncoderIds::Graph { rounds, .. } = &model.layout.encoder else {
        unreachable!()
    };
    let mut x = start;
    for round in rounds {
        for (stage, ids) in round.iter().enumerate() {
            let edges: BTreeSet<(usize, usize)> = g.stages[stage].iter().copied().collect();
            let q = mm(&x, p.get(ids.attn.wq));
            let k = mm(&x, p.get(ids.attn.wk));
            let v = mm(&x, p.get(ids.attn.wv));
            let att = dense_attention(&q, &k, &v, 2, 1.0, |i, j| edges.contains(&(j, i)));
            let sum: Mat = att
                .iter()
                .zip(&x)
                .map(|(a, b)| a.iter().zip(b).map(|(u, w)| u + w).collect())
                .collect();
            let y = dense_norm(&dense_ffn(&sum, p, &ids.ffn), p, &ids.norm);
            x = (0..9)
                .map(|i| {
                    if edges.iter().any(|e| e.1 == i) {
                        y[i].clone()
                    } else {
                        x[i].clone()
                    }
                })
                .collect();
        }
    }
    let got = to_mat(tape.value(out));
    for (a, b) in got.iter().flatten().zip(x.iter().flatten()) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}

#[test]
fn graph_mask_blocks_gradients() {
    let model = Model::<f64>::new(tiny(EncoderKind::Graph), 9).unwrap();
    let g = build_graph(&record(&[2, 1]), &model.config).unwrap();
    let n = g.len();
    for stage in 0..4 {
        for i in 0..n {
            let mut tape = Tape::with_params(&model.params);
            let x = random_input(&mut tape, n, 8, 100 + stage as u64);
            let y = graph_stage(&mut tape, &model, &g, 0, stage, x, &mut None).unwrap();
            let mut w = vec![0.0; n * 8];
            for (c, slot) in w[i * 8..(i + 1) * 8].iter_mut().enumerate() {
                *slot = 1.0 + c as f64;
            }
            let s = tape.weighted_sum(y, w).unwrap();
            let grads = tape.backward(s).unwrap();
            let gx = grads.wrt(x).unwrap();
            let nb = g.neighbours(stage, i);
            for j in (0..n).filter(|&j| j != i && !nb.contains(&j)) {
                assert!(
                    gx[j * 8..(j + 1) * 8].iter().all(|&v| v == 0.0),
                    "stage {stage} node {i} from {j}"
                );
            }
            if !nb.is_empty() {
                assert!(gx[nb[0] * 8..(nb[0] + 1) * 8].iter().any(|&v| v != 0.0));
            }
        }
    }
}

#[test]
fn linearize_single_triple() {
    let vocab = SubwordVocab::bytes_only();
    let c = tiny(EncoderKind::Sequence);
    let mut e = Entity::new("");
    e.push("", "");
    let r = KnowledgeRecord {
        id: "x".into(),
        entities: vec![e],
    };
    // the leading space is the only subword of each empty field
    let lin = linearize(&r, &vocab, &c);
    assert_eq!(lin.len(), 3);
    assert_eq!(lin.entity, vec![0, 0, 0]);
    assert_eq!(lin.triple, vec![0, 1, 1]);
    assert_eq!(lin.property, vec![Property::S, Property::P, Property::O]);
    assert_eq!(lin.position, vec![0, 1, 2]);
    assert!(!lin.truncated);

    let two = linearize(&record(&[1, 1]), &vocab, &c);
    let second = two.entity.iter().position(|&e| e == 1).unwrap();
    assert!(two.entity[second..].iter().all(|&e| e == 1));
    assert_eq!(
        two.tokens[second..second + 3],
        encode_field(&vocab, "e1")[..]
    );
}

#[test]
fn linearize_truncates_at_caps() {
    let vocab = SubwordVocab::bytes_only();
    let mut c = tiny(EncoderKind::Sequence);
    c.caps.max_input_tokens = 5;
    let lin = linearize(&record(&[3]), &vocab, &c);
    assert_eq!(lin.len(), 5);
    assert!(lin.truncated);
}

proptest! {
    #[test]
    fn linearize_matches_index_oracle(shape in prop::collection::vec(0usize..4, 1..4), names in prop::collection::vec("[a-z ]{0,6}", 40)) {
        let vocab = SubwordVocab::bytes_only();
        let c = tiny(EncoderKind::Sequence);
        let mut k = 0;
        let mut next = || { k += 1; names[k % names.len()].clone() };
        let entities = shape.iter().map(|&n| {
            let mut e = Entity::new(next());
            for _ in 0..n {
                e.triples.push((next(), next()));
            }
            e
        }).collect();
        let r = KnowledgeRecord { id: "x".into(), entities };
        let lin = linearize(&r, &vocab, &c);
        let (mut toks, mut ent, mut tri, mut prop) = (vec![], vec![], vec![], vec![]);
        for (i, e) in r.entities.iter().enumerate() {
            let mut emit = |s: &str, t: usize, p: Property| {
                for b in core::iter::once(b' ').chain(s.bytes()) {
                    toks.push(b as u32 + tokenizer::BYTE_OFFSET);
                    ent.push(i);
                    tri.push(t);
                    prop.push(p);
                }
            };
            emit(&e.subject, 0, Property::S);
            for (j, (p, o)) in e.triples.iter().enumerate() {
                emit(p, j + 1, Property::P);
                emit(o, j + 1, Property::O);
            }
        }
        prop_assert_eq!(&lin.tokens, &toks);
        prop_assert_eq!(&lin.entity, &ent);
        prop_assert_eq!(&lin.triple, &tri);
        prop_assert_eq!(&lin.property, &prop);
        prop_assert_eq!(lin.position, (0..toks.len()).collect::<Vec<_>>());
    }
}

fn zero_param(model: &mut Model<f64>, id: crate::numerics::ParamId) {
    model
        .params
        .get_mut(id)
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = 0.0);
}

#[test]
fn sequence_encoder_is_equivariant_without_positions() {
    let vocab = SubwordVocab::bytes_only();
    let mut model = Model::<f64>::new(tiny(EncoderKind::Sequence), 4).unwrap();
    let EncoderIds::Sequence {
        position, entity, ..
    } = model.layout.encoder.clone()
    else {
        unreachable!()
    };
    zero_param(&mut model, position);
    zero_param(&mut model, entity);
    let mut a = Entity::new("ab");
    a.push("c", "de");
    let mut b = Entity::new("f");
    b.push("gh", "i");
    let fwd = KnowledgeRecord {
        id: "x".into(),
        entities: vec![a.clone(), b.clone()],
    };
    let rev = KnowledgeRecord {
        id: "x".into(),
        entities: vec![b, a],
    };
    let run = |r: &KnowledgeRecord| {
        let lin = linearize(r, &vocab, &model.config);
        let mut tape = Tape::with_params(&model.params);
        let out = sequence_encode(&mut tape, &model, &lin).unwrap();
        to_mat(tape.value(out.g))
    };
    let (x, y) = (run(&fwd), run(&rev));
    // entity a spans 8 tokens (" ab", " c", " de"), entity b spans 7
    let perm: Vec<usize> = (7..15).chain(0..7).collect();
    for (i, &p) in perm.iter().enumerate() {
        for (u, v) in x[i].iter().zip(&y[p]) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}

#[test]
fn sequence_attention_rows_sum_to_one() {
    let vocab = SubwordVocab::bytes_only();
    let mut c = tiny(EncoderKind::Sequence);
    c.layers = 2;
    let model = Model::<f64>::new(c, 8).unwrap();
    let lin = linearize(&record(&[2, 1]), &vocab, &model.config);
    let mut tape = Tape::with_params(&model.params);
    let mut w = Some(Vec::new());
    sequence_encode_weights(&mut tape, &model, &lin, &mut w).unwrap();
    let w = w.unwrap();
    assert_eq!(w.len(), 4);
    for a in w {
        let a = tape.value(a);
        for r in 0..a.rows() {
            assert!((a.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn three_token_single_head_reference() {
    let vocab = SubwordVocab::bytes_only();
    let mut c = tiny(EncoderKind::Sequence);
    c.heads = 1;
    let model = Model::<f64>::new(c, 21).unwrap();
    let mut e = Entity::new("");
    e.push("", "");
    let r = KnowledgeRecord {
        id: "x".into(),
        entities: vec![e],
    };
    let lin = linearize(&r, &vocab, &model.config);
    let mut tape = Tape::with_params(&model.params);
    let x0 = sequence_embed(&mut tape, &model, &lin).unwrap();
    let x0 = to_mat(tape.value(x0));
    let out = sequence_encode(&mut tape, &model, &lin).unwrap();

    let p = &model.params;
    let EncoderIds::Sequence { layers, .. } = &model.layout.encoder else {
        unreachable!()
    };
    let ids = &layers[0];
    let q = mm(&x0, p.get(ids.attn.wq));
    let k = mm(&x0, p.get(ids.attn.wk));
    let v = mm(&x0, p.get(ids.attn.wv));
    let att = dense_attention(&q, &k, &v, 1, 1.0 / 8f64.sqrt(), |_, _| true);
    let att = mm(&att, p.get(ids.attn.wo.unwrap()));
    let r1: Mat = x0
        .iter()
        .zip(&att)
        .map(|(a, b)| a.iter().zip(b).map(|(u, w)| u + w).collect())
        .collect();
    let h = dense_norm(&r1, p, &ids.norm1);
    let f = dense_ffn(&h, p, &ids.ffn);
    let r2: Mat = h
        .iter()
        .zip(&f)
        .map(|(a, b)| a.iter().zip(b).map(|(u, w)| u + w).collect())
        .collect();
    let expected = dense_norm(&r2, p, &ids.norm2);
    let got = to_mat(tape.value(out.g));
    assert_eq!(got.len(), 3);
    for (a, b) in got.iter().flatten().zip(expected.iter().flatten()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn graph_copy_view_broadcasts_leaves() {
    let vocab = SubwordVocab::bytes_only();
    let model = Model::<f64>::new(tiny(EncoderKind::Graph), 2).unwrap();
    let src = prepare_source(&record(&[1]), &vocab, &model.config).unwrap();
    let mut tape = Tape::with_params(&model.params);
    let out = graph_encode(&mut tape, &model, &src).unwrap();
    // leaves " e0", " p0", " o00" give 3 + 3 + 4 subwords
    assert_eq!(out.copy_ids.len(), 10);
    let g = tape.value(out.g);
    let copy = tape.value(out.copy);
    for (row, node) in [(0, 2), (2, 2), (3, 3), (9, 4)] {
        assert_eq!(copy.row(row), g.row(node));
    }
}

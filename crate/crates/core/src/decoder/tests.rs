use super::*;
use crate::model::ModelConfig;
use crate::numerics::{adam_step, AdamConfig, AdamState, ParamSet};
use crate::record::Entity;
use alloc::string::ToString;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(kind: EncoderKind) -> ModelConfig {
    let mut c = ModelConfig::desk(kind, 300);
    c.hidden = 8;
    c.heads = 2;
    c.ffn = 12;
    c.layers = 1;
    c.decoder_layers = 1;
    c.caps.max_target_tokens = 32;
    c
}

fn record(pairs: &[(&str, &[(&str, &str)])]) -> KnowledgeRecord {
    let entities = pairs
        .iter()
        .map(|(s, ts)| {
            let mut e = Entity::new(*s);
            for (p, o) in ts.iter() {
                e.push(*p, *o);
            }
            e
        })
        .collect();
    KnowledgeRecord {
        id: "r".to_string(),
        entities,
    }
}

fn sample_record() -> KnowledgeRecord {
    record(&[
        ("Ab", &[("is", "cd"), ("in", "Ef")]),
        ("Ef", &[("near", "Gh")]),
    ])
}

fn example(model: &Model<f64>, r: &KnowledgeRecord, text: &str) -> Example {
    Example::new(r, text, &SubwordVocab::bytes_only(), &model.config).unwrap()
}

fn random_record(rng: &mut ChaCha8Rng) -> KnowledgeRecord {
    let word = |rng: &mut ChaCha8Rng| -> String {
        let n = rng.random_range(1..4);
        (0..n)
            .map(|_| rng.random_range(b'a'..=b'e') as char)
            .collect()
    };
    let entities = (0..rng.random_range(1..3))
        .map(|_| {
            let mut e = Entity::new(word(rng));
            for _ in 0..rng.random_range(1..3) {
                let (p, o) = (word(rng), word(rng));
                e.triples.push((p, o));
            }
            e
        })
        .collect();
    KnowledgeRecord {
        id: "r".to_string(),
        entities,
    }
}

#[test]
fn degenerate_gates_and_hand_mixing() {
    let vocab = SubwordVocab::bytes_only();
    let model = Model::<f64>::new(tiny(EncoderKind::Graph), 3).unwrap();
    let r = record(&[("x", &[("y", "zq")])]);
    let src = encoder::prepare_source(&r, &vocab, &model.config).unwrap();
    let enc = encode_states(&model, &src).unwrap();
    let step = |p: Option<f64>| {
        let mut s = DecoderState::new(&model);
        s.prefix.push(70);
        decode_step_gated(&mut s, &enc, &model, p).unwrap()
    };
    let (open, closed, free) = (step(Some(0.0)), step(Some(1.0)), step(None));
    // 'q' occurs at exactly one copy position
    let q = b'q' as u32 + crate::tokenizer::BYTE_OFFSET;
    let j = enc.copy_ids.iter().position(|&t| t == q).unwrap();
    assert_eq!(enc.copy_ids.iter().filter(|&&t| t == q).count(), 1);
    assert!((open.probs[q as usize] - open.alpha[j]).abs() < 1e-12);
    assert!(free.p_gen > 0.0 && free.p_gen < 1.0);
    for w in 0..300 {
        let mixed = free.p_gen * closed.probs[w] + (1.0 - free.p_gen) * open.probs[w];
        assert!((free.probs[w] - mixed).abs() < 1e-12);
        if !enc.copy_ids.contains(&(w as u32)) {
            assert_eq!(open.probs[w], 0.0);
        }
    }
    // closed gate equals the vocabulary softmax of a copy-free model with the same weights
    let mut nocopy = model.config.clone();
    nocopy.copy = false;
    nocopy.copy_loss = false;
    let shared: ParamSet<f64> = {
        let bare = Model::<f64>::new(nocopy.clone(), 0).unwrap();
        let mut p = ParamSet::new();
        for (name, _) in bare.params.iter() {
            p.push(
                name,
                model.params.get(model.params.find(name).unwrap()).clone(),
            );
        }
        p
    };
    let bare = Model::from_params(nocopy, shared).unwrap();
    let enc2 = encode_states(&bare, &src).unwrap();
    let mut s = DecoderState::new(&bare);
    s.prefix.push(70);
    let pv = decode_step(&mut s, &enc2, &bare).unwrap();
    assert!(pv.alpha.is_empty());
    assert_eq!(pv.p_gen, 1.0);
    for w in 0..300 {
        assert!((pv.probs[w] - closed.probs[w]).abs() < 1e-6);
    }
}

#[test]
fn step_distributions_are_normalized() {
    let vocab = SubwordVocab::bytes_only();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let models: Vec<Model<f64>> = (0..10)
        .map(|s| {
            let kind = if s % 2 == 0 {
                EncoderKind::Graph
            } else {
                EncoderKind::Sequence
            };
            let mut c = tiny(kind);
            c.scale_copy = s % 3 == 0;
            Model::new(c, s).unwrap()
        })
        .collect();
    for i in 0..1000 {
        let model = &models[i % models.len()];
        let src = encoder::prepare_source(&random_record(&mut rng), &vocab, &model.config).unwrap();
        let enc = encode_states(model, &src).unwrap();
        let mut state = DecoderState::new(model);
        for _ in 0..rng.random_range(0..4) {
            state.prefix.push(rng.random_range(7..263));
        }
        let d = decode_step(&mut state, &enc, model).unwrap();
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!((d.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert_eq!(d.alpha.len(), enc.copy_ids.len());
        assert!((0.0..=1.0).contains(&d.p_gen));
    }
}

#[test]
fn cached_steps_match_teacher_forcing() {
    for kind in [EncoderKind::Graph, EncoderKind::Sequence] {
        let model = Model::<f64>::new(tiny(kind), 6).unwrap();
        let ex = example(&model, &sample_record(), "Ab is cd.");
        let mut tape = Tape::with_params(&model.params);
        let (_, heads) = forward(&mut tape, &model, &ex).unwrap();
        let logits = tape.value(heads.logits).clone();
        let src = ex.source.clone();
        let enc = encode_states(&model, &src).unwrap();
        let mut state = DecoderState::new(&model);
        for (t, &y) in ex.target.iter().enumerate() {
            let d = decode_step_gated(&mut state, &enc, &model, Some(1.0)).unwrap();
            let row: Vec<f64> = logits.row(t).to_vec();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            for w in 0..300 {
                assert!((d.probs[w] - (row[w] - max).exp() / z).abs() < 1e-10);
            }
            state.prefix.push(y);
        }
        assert_eq!(state.cache[0].k.rows(), ex.target.len());
    }
}

#[test]
fn empty_copy_view_is_an_error() {
    let model = Model::<f64>::new(tiny(EncoderKind::Graph), 1).unwrap();
    let src = encoder::prepare_source(&sample_record(), &SubwordVocab::bytes_only(), &model.config)
        .unwrap();
    let mut enc = encode_states(&model, &src).unwrap();
    enc.copy_ids.clear();
    let mut s = DecoderState::new(&model);
    assert!(matches!(
        decode_step(&mut s, &enc, &model),
        Err(ModelError::EmptyEncoderOutput)
    ));
}

#[test]
fn uniform_model_loss_is_log_vocab() {
    let mut c = tiny(EncoderKind::Sequence);
    c.copy = false;
    c.copy_loss = false;
    let mut model = Model::<f64>::new(c, 2).unwrap();
    for id in [model.layout.out_w, model.layout.out_b] {
        model
            .params
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let batch = vec![
        example(&model, &sample_record(), "Ab is cd."),
        example(&model, &sample_record(), "Gh."),
    ];
    let stats = nll_loss(&model, &batch).unwrap();
    assert!((stats.loss - 300f64.ln()).abs() < 1e-9);
    assert_eq!(
        stats.tokens,
        batch.iter().map(|e| e.target.len()).sum::<usize>()
    );
    assert!(matches!(nll_loss(&model, &[]), Err(ModelError::EmptyBatch)));
}

#[test]
fn copy_loss_vanishes_without_copiable_steps() {
    let c = tiny(EncoderKind::Graph);
    let model = Model::<f64>::new(c.clone(), 2).unwrap();
    let mut ex = example(&model, &record(&[("a", &[("b", "c")])]), "x");
    ex.target = vec![200, 201, EOS];
    assert!(ex.copiable_steps(c.encoder).iter().all(|&b| !b));
    let with = nll_loss(&model, core::slice::from_ref(&ex)).unwrap();
    let mut off = c;
    off.copy_loss = false;
    let without = nll_loss(
        &Model::from_params(off, model.params.clone()).unwrap(),
        &[ex],
    )
    .unwrap();
    assert_eq!(with.copy_nll, 0.0);
    assert_eq!(with.copy_steps, 0);
    assert_eq!(with.loss, without.loss);
}

#[test]
fn copy_loss_counts_copiable_steps() {
    let c = tiny(EncoderKind::Sequence);
    let model = Model::<f64>::new(c.clone(), 2).unwrap();
    let ex = example(&model, &record(&[("ab", &[("c", "d")])]), "ab");
    // " ab" then EOS: the three byte tokens all occur in the input
    assert_eq!(ex.copiable_steps(c.encoder), vec![true, true, true, false]);
    let s = nll_loss(&model, &[ex]).unwrap();
    assert_eq!(s.copy_steps, 3);
    assert!(s.copy_nll > 0.0);
    assert!((s.loss - (s.nll / 4.0 + s.copy_nll / 3.0)).abs() < 1e-9);
}

fn train_steps(model: &mut Model<f64>, batch: &[Example], steps: usize, lr: f64) -> Vec<f64> {
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(lr));
    let scale = LossScale::for_batch(batch, &model.config);
    let mut losses = Vec::new();
    for _ in 0..steps {
        let mut total = Grads::zeros_like(&model.params);
        let mut loss = 0.0;
        for ex in batch {
            let (g, s) = example_grads(model, ex, scale).unwrap();
            total.add_assign(&g).unwrap();
            loss += s.loss;
        }
        losses.push(loss);
        total.clip_global_norm(1.0);
        adam_step(&mut model.params, &total, &mut adam).unwrap();
    }
    losses
}

#[test]
fn loss_decreases_over_fifty_adam_steps() {
    for kind in [EncoderKind::Graph, EncoderKind::Sequence] {
        let mut model = Model::<f64>::new(tiny(kind), 5).unwrap();
        let batch = vec![example(&model, &sample_record(), "Ab is cd.")];
        let losses = train_steps(&mut model, &batch, 50, 1e-3);
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{kind:?}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn overfit_pair_is_regenerated() {
    let text = "Ab is cd in Ef.";
    let corpus = [text, " Ab is cd in Ef near Gh.", " near Gh"].repeat(4);
    let vocab = crate::tokenizer::train_bpe(&corpus, 300).unwrap();
    let mut c = tiny(EncoderKind::Graph);
    c.hidden = 16;
    c.ffn = 32;
    let mut model = Model::<f64>::new(c, 9).unwrap();
    let r = sample_record();
    let batch = vec![Example::new(&r, text, &vocab, &model.config).unwrap()];
    assert!(batch[0].target.len() <= 8);
    train_steps(&mut model, &batch, 200, 3e-3);
    assert_eq!(
        generate(&model, &vocab, &r, DecodeMode::Greedy, 40).unwrap(),
        text
    );
    assert_eq!(
        generate(&model, &vocab, &r, DecodeMode::Beam(3), 40).unwrap(),
        text
    );
}

#[test]
fn width_one_beam_is_greedy() {
    let vocab = SubwordVocab::bytes_only();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..6 {
        let kind = if seed % 2 == 0 {
            EncoderKind::Graph
        } else {
            EncoderKind::Sequence
        };
        let mut model = Model::<f64>::new(tiny(kind), seed).unwrap();
        // sharpen the output layer so decoding does not stop at once
        model
            .params
            .get_mut(model.layout.out_w)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v *= 50.0);
        let src = encoder::prepare_source(&random_record(&mut rng), &vocab, &model.config).unwrap();
        let g = generate_ids(&model, &src, DecodeMode::Greedy, 12).unwrap();
        let b = generate_ids(&model, &src, DecodeMode::Beam(1), 12).unwrap();
        assert_eq!(g, b);
        assert!(
            generate_ids(&model, &src, DecodeMode::Greedy, 1)
                .unwrap()
                .len()
                <= 1
        );
        assert!(
            generate_ids(&model, &src, DecodeMode::Beam(4), 1)
                .unwrap()
                .len()
                <= 1
        );
        assert!(
            generate_ids(&model, &src, DecodeMode::Beam(4), 12)
                .unwrap()
                .len()
                <= 12
        );
    }
}

#[test]
fn mix_distribution_scatters_copy_mass() {
    let p = mix_distribution(&[0.5, 0.25, 0.25], &[0.75, 0.25], &[2, 2], 0.5);
    assert_eq!(p, vec![0.25, 0.125, 0.625]);
}

#[test]
fn target_preparation() {
    let vocab = SubwordVocab::bytes_only();
    assert_eq!(prepare_target("ab", &vocab, 10), vec![39, 104, 105, EOS]);
    assert_eq!(prepare_target("abcdef", &vocab, 3), vec![39, 104, EOS]);
    assert_eq!(ids_to_text(&vocab, &[39, 104, 105]), "ab");
}

#[test]
fn full_loss_gradients_all_modes() {
    for r in crate::gradsuite::loss_checks(13).unwrap() {
        assert!(r.passed(), "{}: {}", r.name, r.max_rel_error);
    }
}

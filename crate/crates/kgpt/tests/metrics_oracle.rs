use kgpt_core::metrics::{bleu4, rouge_l};
use serde::Deserialize;

#[derive(Deserialize)]
struct Item {
    hyp: String,
    refs: Vec<String>,
}

#[derive(Deserialize)]
struct Corpus {
    items: Vec<Item>,
    bleu4: f64,
    rouge_l: f64,
}

#[derive(Deserialize)]
struct Oracle {
    single: f64,
    corpora: Vec<Corpus>,
}

fn oracle() -> Oracle {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/data/metrics_oracle.json"
    ))
    .unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn matches_scripted_reference() {
    let o = oracle();
    assert_eq!(o.corpora.len(), 50);
    let single = bleu4(&["the cat sat".into()], &[vec!["the cat sat down".into()]]).unwrap();
    assert!((single - o.single).abs() < 1e-6, "{single} vs {}", o.single);
    for (i, c) in o.corpora.iter().enumerate() {
        let hyps: Vec<String> = c.items.iter().map(|x| x.hyp.clone()).collect();
        let refs: Vec<Vec<String>> = c.items.iter().map(|x| x.refs.clone()).collect();
        let b = bleu4(&hyps, &refs).unwrap();
        let r = rouge_l(&hyps, &refs).unwrap();
        assert!(
            (b - c.bleu4).abs() < 1e-6,
            "corpus {i}: bleu {b} vs {}",
            c.bleu4
        );
        assert!(
            (r - c.rouge_l).abs() < 1e-6,
            "corpus {i}: rouge {r} vs {}",
            c.rouge_l
        );
    }
}

#[test]
fn identical_strings_score_100() {
    let o = oracle();
    for c in &o.corpora {
        let refs: Vec<Vec<String>> = c.items.iter().map(|x| x.refs.clone()).collect();
        let hyps: Vec<String> = c.items.iter().map(|x| x.refs[0].clone()).collect();
        if hyps.iter().all(|h| h.split_whitespace().count() >= 4) {
            assert!((bleu4(&hyps, &refs).unwrap() - 100.0).abs() < 1e-9);
        }
        assert!((rouge_l(&hyps, &refs).unwrap() - 100.0).abs() < 1e-9);
    }
}

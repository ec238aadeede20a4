//! Corpus construction: candidate extraction from anchored sentences, the
//! lexical grounding score, threshold selection, splits and statistics.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::record::{Entity, GroundedPair, KnowledgeRecord};

pub const DEFAULT_THRESHOLD: f64 = 0.13;

const STOPWORDS_FILE: &str = include_str!("../data/stopwords.txt");

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("entity {0:?} is not in the knowledge base")]
    UnresolvedEntity(String),
    #[error("anchor {index} is out of bounds or overlaps another")]
    BadAnchor { index: usize },
    #[error("record has no anchored entities")]
    NoAnchors,
    #[error("cannot split {have} pairs into {n_val} validation and {n_test} test items")]
    InsufficientData {
        have: usize,
        n_val: usize,
        n_test: usize,
    },
    #[error("empty corpus")]
    EmptyCorpus,
}

pub fn stopwords() -> BTreeSet<&'static str> {
    STOPWORDS_FILE
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

/// Half-open token span `[start, end)` linked to a KB entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "(usize, usize, String)", into = "(usize, usize, String)")]
pub struct Anchor {
    pub start: usize,
    pub end: usize,
    pub entity: String,
}

impl From<(usize, usize, String)> for Anchor {
    fn from((start, end, entity): (usize, usize, String)) -> Self {
        Self { start, end, entity }
    }
}

impl From<Anchor> for (usize, usize, String) {
    fn from(a: Anchor) -> Self {
        (a.start, a.end, a.entity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub anchors: Vec<Anchor>,
}

impl AnnotatedSentence {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut spans: Vec<(usize, usize, usize)> = self
            .anchors
            .iter()
            .enumerate()
            .map(|(i, a)| (a.start, a.end, i))
            .collect();
        spans.sort();
        let mut last_end = 0;
        for &(s, e, i) in &spans {
            if s >= e || e > self.tokens.len() || s < last_end {
                return Err(CorpusError::BadAnchor { index: i });
            }
            last_end = e;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KbObject {
    Literal(String),
    Ref {
        #[serde(rename = "ref")]
        id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KbEntry {
    pub id: String,
    pub label: String,
    pub triples: Vec<(String, KbObject)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    entries: BTreeMap<String, KbEntry>,
}

impl KnowledgeBase {
    /// Builds a KB, checking every object reference resolves.
    pub fn new(entries: impl IntoIterator<Item = KbEntry>) -> Result<Self, CorpusError> {
        let entries: BTreeMap<String, KbEntry> =
            entries.into_iter().map(|e| (e.id.clone(), e)).collect();
        for e in entries.values() {
            for (_, o) in &e.triples {
                if let KbObject::Ref { id } = o {
                    if !entries.contains_key(id) {
                        return Err(CorpusError::UnresolvedEntity(id.clone()));
                    }
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, id: &str) -> Option<&KbEntry> {
        self.entries.get(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn object_text<'a>(&'a self, o: &'a KbObject) -> &'a str {
        match o {
            KbObject::Literal(s) => s,
            KbObject::Ref { id } => &self.entries[id].label,
        }
    }

    /// The entry as a record entity with references replaced by labels.
    pub fn entity(&self, id: &str) -> Option<Entity> {
        let e = self.entries.get(id)?;
        let mut out = Entity::new(e.label.clone());
        for (p, o) in &e.triples {
            out.push(p.clone(), self.object_text(o));
        }
        Some(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateFilter {
    pub min_anchors: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for CandidateFilter {
    fn default() -> Self {
        Self {
            min_anchors: 2,
            min_tokens: 10,
            max_tokens: 50,
        }
    }
}

impl CandidateFilter {
    pub fn accepts(&self, s: &AnnotatedSentence) -> bool {
        s.anchors.len() >= self.min_anchors
            && (self.min_tokens..=self.max_tokens).contains(&s.tokens.len())
    }
}

fn lower_tokens(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

fn contains_label(sentence: &[String], label: &str) -> bool {
    let label: Vec<String> = label.split_whitespace().map(str::to_lowercase).collect();
    !label.is_empty() && sentence.windows(label.len()).any(|w| w == label.as_slice())
}

/// A sentence passing the filter, with its record. `score` is left at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub sentence: usize,
    pub pair: GroundedPair,
}

/// Builds one record per accepted sentence: one entity per anchored KB
/// entity, plus one per object entity whose label also occurs in the
/// sentence. Entities without triples are skipped, as are sentences left
/// with no entity.
pub fn extract_candidates(
    doc: &[AnnotatedSentence],
    kb: &KnowledgeBase,
    filter: &CandidateFilter,
) -> Result<Vec<Candidate>, CorpusError> {
    let mut out = Vec::new();
    for (si, s) in doc.iter().enumerate() {
        s.validate()?;
        for a in &s.anchors {
            if kb.get(&a.entity).is_none() {
                return Err(CorpusError::UnresolvedEntity(a.entity.clone()));
            }
        }
        if !filter.accepts(s) {
            continue;
        }
        let lowered = lower_tokens(&s.tokens);
        let mut ids: Vec<&str> = Vec::new();
        for a in &s.anchors {
            if !ids.contains(&a.entity.as_str()) {
                ids.push(&a.entity);
            }
        }
        let anchored = ids.len();
        for i in 0..anchored {
            for (_, o) in &kb.entries[ids[i]].triples {
                if let KbObject::Ref { id } = o {
                    if !ids.contains(&id.as_str())
                        && contains_label(&lowered, &kb.entries[id].label)
                    {
                        ids.push(id);
                    }
                }
            }
        }
        let entities: Vec<Entity> = ids
            .iter()
            .filter_map(|id| kb.entity(id))
            .filter(|e| !e.triples.is_empty())
            .collect();
        if entities.is_empty() {
            continue;
        }
        let record = KnowledgeRecord {
            id: alloc::format!("s{si}"),
            entities,
        };
        out.push(Candidate {
            sentence: si,
            pair: GroundedPair::new(record, s.text(), 0.0),
        });
    }
    Ok(out)
}

/// Lowercased alphanumeric pieces of `text` that are not stopwords.
pub fn content_unigrams(text: &str, stop: &BTreeSet<&str>) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .filter(|w| !stop.contains(w.as_str()))
        .collect()
}

/// Fraction of the sentence's content unigrams found in `neighbours`.
pub fn round_score(sentence: &BTreeSet<String>, neighbours: &BTreeSet<String>) -> f64 {
    if sentence.is_empty() {
        return 0.0;
    }
    sentence.intersection(neighbours).count() as f64 / sentence.len() as f64
}

/// Content unigrams of an entity's predicates and objects.
pub fn neighbour_unigrams(entity: &Entity, stop: &BTreeSet<&str>) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for (p, o) in &entity.triples {
        set.extend(content_unigrams(p, stop));
        set.extend(content_unigrams(o, stop));
    }
    set
}

/// Mean round score over the record entities that are anchored in the
/// sentence; when none match by label, every record entity is a round.
pub fn grounding_score(
    sentence: &AnnotatedSentence,
    record: &KnowledgeRecord,
    kb: &KnowledgeBase,
) -> Result<f64, CorpusError> {
    if record.entities.is_empty() {
        return Err(CorpusError::NoAnchors);
    }
    let stop = stopwords();
    let sent = content_unigrams(&sentence.tokens.join(" "), &stop);
    let anchored: BTreeSet<&str> = sentence
        .anchors
        .iter()
        .filter_map(|a| kb.get(&a.entity))
        .map(|e| e.label.as_str())
        .collect();
    let mut rounds: Vec<&Entity> = record
        .entities
        .iter()
        .filter(|e| anchored.contains(e.subject.as_str()))
        .collect();
    if rounds.is_empty() {
        rounds = record.entities.iter().collect();
    }
    let total: f64 = rounds
        .iter()
        .map(|e| round_score(&sent, &neighbour_unigrams(e, &stop)))
        .sum();
    Ok(total / rounds.len() as f64)
}

/// Extracts candidates and scores each one.
pub fn build_corpus(
    doc: &[AnnotatedSentence],
    kb: &KnowledgeBase,
    filter: &CandidateFilter,
) -> Result<Vec<GroundedPair>, CorpusError> {
    extract_candidates(doc, kb, filter)?
        .into_iter()
        .map(|c| {
            let score = grounding_score(&doc[c.sentence], &c.pair.record, kb)?;
            Ok(GroundedPair {
                score: score.clamp(0.0, 1.0),
                ..c.pair
            })
        })
        .collect()
}

pub fn select(pairs: &[GroundedPair], threshold: f64) -> Vec<GroundedPair> {
    pairs
        .iter()
        .filter(|p| p.score >= threshold)
        .cloned()
        .collect()
}

pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded shuffle, then the first `n_val` items go to validation, the next
/// `n_test` to test and the rest to training.
pub fn split<T: Clone>(
    items: &[T],
    n_val: usize,
    n_test: usize,
    seed: u64,
) -> Result<Splits<T>, CorpusError> {
    if n_val + n_test >= items.len() {
        return Err(CorpusError::InsufficientData {
            have: items.len(),
            n_val,
            n_test,
        });
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| items[i].clone()).collect::<Vec<T>>();
    Ok(Splits {
        val: pick(&order[..n_val]),
        test: pick(&order[n_val..n_val + n_test]),
        train: pick(&order[n_val + n_test..]),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub mean_length: f64,
    pub distinct_entities: usize,
    pub distinct_predicates: usize,
    pub triples: usize,
    pub mean_entities_per_sentence: f64,
    /// Sorted by descending count, then by predicate.
    pub predicate_histogram: Vec<(String, usize)>,
}

/// Sentence length counts whitespace-separated tokens of the text.
pub fn stats(pairs: &[GroundedPair]) -> Result<CorpusStats, CorpusError> {
    if pairs.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut tokens = 0usize;
    let mut entity_count = 0usize;
    let mut subjects = BTreeSet::new();
    let mut hist: BTreeMap<&str, usize> = BTreeMap::new();
    for p in pairs {
        tokens += p.text.split_whitespace().count();
        entity_count += p.record.entities.len();
        for e in &p.record.entities {
            subjects.insert(e.subject.as_str());
            for (pred, _) in &e.triples {
                *hist.entry(pred.as_str()).or_insert(0) += 1;
            }
        }
    }
    let mut predicate_histogram: Vec<(String, usize)> =
        hist.iter().map(|(k, &v)| (k.to_string(), v)).collect();
    predicate_histogram.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let n = pairs.len() as f64;
    Ok(CorpusStats {
        sentences: pairs.len(),
        mean_length: tokens as f64 / n,
        distinct_entities: subjects.len(),
        distinct_predicates: hist.len(),
        triples: hist.values().sum(),
        mean_entities_per_sentence: entity_count as f64 / n,
        predicate_histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn lit(p: &str, o: &str) -> (String, KbObject) {
        (p.into(), KbObject::Literal(o.into()))
    }

    fn refr(p: &str, id: &str) -> (String, KbObject) {
        (p.into(), KbObject::Ref { id: id.into() })
    }

    fn roma_kb() -> KnowledgeBase {
        KnowledgeBase::new([
            KbEntry {
                id: "Q1".into(),
                label: "Roma F.C.".into(),
                triples: vec![
                    refr("country", "Q2"),
                    lit("inception", "7 June 1927"),
                    lit("sport", "football"),
                ],
            },
            KbEntry {
                id: "Q2".into(),
                label: "Italy".into(),
                triples: vec![lit("capital", "Rome"), lit("continent", "Europe")],
            },
            KbEntry {
                id: "Q3".into(),
                label: "Germany".into(),
                triples: vec![lit("capital", "Berlin")],
            },
        ])
        .unwrap()
    }

    fn anchor(s: usize, e: usize, id: &str) -> Anchor {
        Anchor {
            start: s,
            end: e,
            entity: id.into(),
        }
    }

    #[test]
    fn stopword_list_loaded() {
        let s = stopwords();
        assert!((110..=130).contains(&s.len()));
        assert!(s.contains("the") && !s.contains("italy"));
    }

    #[test]
    fn short_sentence_excluded() {
        let kb = roma_kb();
        let s = AnnotatedSentence {
            tokens: toks("Roma F.C. Italy Germany a b c d"),
            anchors: vec![anchor(0, 2, "Q1"), anchor(2, 3, "Q2"), anchor(3, 4, "Q3")],
        };
        assert!(extract_candidates(&[s], &kb, &CandidateFilter::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn bridged_entity_is_attached() {
        let kb = roma_kb();
        let tokens = toks("Roma F.C. is a football club founded in 1927 in the capital Rome of Italy , playing in Serie A");
        assert_eq!(tokens.len(), 20);
        let s = AnnotatedSentence {
            tokens,
            anchors: vec![anchor(0, 2, "Q1"), anchor(14, 15, "Q2")],
        };
        let c = extract_candidates(&[s.clone()], &kb, &CandidateFilter::default()).unwrap();
        assert_eq!(c.len(), 1);
        let r = &c[0].pair.record;
        r.validate().unwrap();
        assert_eq!(r.entities[0].subject, "Roma F.C.");
        assert!(r.entities[0]
            .triples
            .contains(&("country".into(), "Italy".into())));
        assert_eq!(r.entities[1].subject, "Italy");
        assert!(r.entities[1]
            .triples
            .contains(&("capital".into(), "Rome".into())));

        // Italy not anchored but mentioned: still bridged
        let s2 = AnnotatedSentence {
            anchors: vec![anchor(0, 2, "Q1"), anchor(12, 13, "Q3")],
            ..s
        };
        let c = extract_candidates(&[s2], &kb, &CandidateFilter::default()).unwrap();
        let subjects: Vec<&str> = c[0]
            .pair
            .record
            .entities
            .iter()
            .map(|e| e.subject.as_str())
            .collect();
        assert_eq!(subjects, ["Roma F.C.", "Germany", "Italy"]);
    }

    #[test]
    fn unresolved_anchor() {
        let kb = roma_kb();
        let s = AnnotatedSentence {
            tokens: toks("x y"),
            anchors: vec![anchor(0, 1, "Q9")],
        };
        assert_eq!(
            extract_candidates(&[s], &kb, &CandidateFilter::default()),
            Err(CorpusError::UnresolvedEntity("Q9".into()))
        );
        let bad = KnowledgeBase::new([KbEntry {
            id: "a".into(),
            label: "A".into(),
            triples: vec![refr("p", "zz")],
        }]);
        assert!(bad.is_err());
    }

    #[test]
    fn ungrounded_sentence_scores_zero() {
        let kb = roma_kb();
        let tokens = toks(
            "He was born in a small village and later moved abroad with Italy and Germany friends",
        );
        let s = AnnotatedSentence {
            tokens,
            anchors: vec![anchor(12, 13, "Q2"), anchor(14, 15, "Q3")],
        };
        let c = extract_candidates(&[s.clone()], &kb, &CandidateFilter::default()).unwrap();
        assert_eq!(grounding_score(&s, &c[0].pair.record, &kb).unwrap(), 0.0);
    }

    #[test]
    fn hand_computed_three_of_eight() {
        // 10 tokens, stopwords "the" and "of", 8 distinct content words; 3 covered
        let kb = KnowledgeBase::new([
            KbEntry {
                id: "e".into(),
                label: "Alpha".into(),
                triples: vec![lit("river", "Nile"), lit("delta", "green")],
            },
            KbEntry {
                id: "f".into(),
                label: "Beta".into(),
                triples: vec![lit("x", "y")],
            },
        ])
        .unwrap();
        let s = AnnotatedSentence {
            tokens: toks("Alpha the river Nile crossed green fields of distant hills"),
            anchors: vec![anchor(0, 1, "e")],
        };
        let record = KnowledgeRecord {
            id: "r".into(),
            entities: vec![kb.entity("e").unwrap()],
        };
        assert!((grounding_score(&s, &record, &kb).unwrap() - 0.375).abs() < 1e-12);
    }

    #[test]
    fn grounded_sentence_above_point_three() {
        let kb = roma_kb();
        let tokens =
            toks("Roma F.C. of Italy : football since 7 June 1927 in the capital Rome , Europe");
        let s = AnnotatedSentence {
            tokens,
            anchors: vec![anchor(0, 2, "Q1"), anchor(3, 4, "Q2")],
        };
        let c = extract_candidates(&[s.clone()], &kb, &CandidateFilter::default()).unwrap();
        let score = grounding_score(&s, &c[0].pair.record, &kb).unwrap();
        assert!(score > 0.30, "{score}");
    }

    #[test]
    fn no_anchors_error() {
        let kb = roma_kb();
        let s = AnnotatedSentence {
            tokens: toks("a"),
            anchors: vec![],
        };
        let r = KnowledgeRecord {
            id: "r".into(),
            entities: vec![],
        };
        assert_eq!(grounding_score(&s, &r, &kb), Err(CorpusError::NoAnchors));
    }

    fn pair(score: f64) -> GroundedPair {
        let r = crate::record::from_rdf_triples("r", &[("A", "p", "x")]).unwrap();
        GroundedPair::new(r, "a b", score)
    }

    #[test]
    fn select_cases() {
        let pairs = vec![pair(0.05), pair(0.13), pair(0.40)];
        assert_eq!(select(&pairs, 0.0), pairs);
        assert_eq!(select(&pairs, DEFAULT_THRESHOLD).len(), 2);
        assert!(select(&pairs, 1.0 + 1e-9).is_empty());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let items: Vec<u32> = (0..100).collect();
        let a = split(&items, 10, 10, 7).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (80, 10, 10));
        let b = split(&items, 10, 10, 7).unwrap();
        assert_eq!(
            (a.train.clone(), a.val.clone(), a.test.clone()),
            (b.train, b.val, b.test)
        );
        let mut all: Vec<u32> = a.train.into_iter().chain(a.val).chain(a.test).collect();
        all.sort();
        assert_eq!(all, items);
        assert!(matches!(
            split(&items, 50, 50, 0),
            Err(CorpusError::InsufficientData { .. })
        ));
    }

    #[test]
    fn stats_single_pair() {
        let r = crate::record::from_rdf_triples(
            "r",
            &[
                ("A", "p", "1"),
                ("A", "q", "2"),
                ("B", "p", "3"),
                ("C", "r", "4"),
                ("C", "p", "5"),
            ],
        )
        .unwrap();
        let text = (0..20).map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
        let st = stats(&[GroundedPair::new(r, text, 0.5)]).unwrap();
        assert_eq!(st.mean_length, 20.0);
        assert_eq!(st.mean_entities_per_sentence, 3.0);
        assert_eq!(st.triples, 5);
        assert_eq!(st.predicate_histogram[0], ("p".into(), 3));
        assert_eq!(stats(&[]), Err(CorpusError::EmptyCorpus));
    }

    proptest! {
        #[test]
        fn score_in_unit_interval_and_monotone(
            sent in prop::collection::btree_set("[a-f]", 0..6),
            base in prop::collection::btree_set("[a-h]", 0..6),
            extra in prop::collection::btree_set("[a-h]", 0..6),
        ) {
            let small = round_score(&sent, &base);
            let grown: BTreeSet<String> = base.union(&extra).cloned().collect();
            let big = round_score(&sent, &grown);
            prop_assert!((0.0..=1.0).contains(&small));
            prop_assert!(big >= small);
        }

        #[test]
        fn threshold_monotone(scores in prop::collection::vec(0.0f64..1.0, 0..20), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let pairs: Vec<GroundedPair> = scores.iter().map(|&s| pair(s)).collect();
            let a = select(&pairs, lo);
            let b = select(&pairs, hi);
            prop_assert!(b.iter().all(|x| a.contains(x)));
            prop_assert!(b.len() <= a.len());
        }
    }
}

//! The generalized dictionary input format and converters into it.
//!
//! A [`KnowledgeRecord`] keys on subjects: each [`Entity`] carries its
//! ordered `(predicate, object)` pairs.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("empty input")]
    EmptyInput,
    #[error("malformed triple at position {0}: empty component")]
    MalformedTriple(usize),
    #[error("empty subject name")]
    EmptyName,
    #[error("entity {0:?} has no triples")]
    EmptyTriples(String),
    #[error("record has no entities")]
    NoEntities,
    #[error("entity {subject:?} has an empty predicate or object")]
    EmptyField { subject: String },
    #[error("entity {subject:?} repeats ({predicate:?}, {object:?})")]
    DuplicateTriple {
        subject: String,
        predicate: String,
        object: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Entity {
    pub subject: String,
    pub triples: Vec<(String, String)>,
}

impl Entity {
    pub fn new(subject: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            triples: Vec::new(),
        }
    }

    /// Appends a pair unless it is already present. Returns whether it was added.
    pub fn push(&mut self, predicate: impl Into<String>, object: impl Into<String>) -> bool {
        let pair = (predicate.into(), object.into());
        if self.triples.contains(&pair) {
            return false;
        }
        self.triples.push(pair);
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KnowledgeRecord {
    pub id: String,
    pub entities: Vec<Entity>,
}

impl KnowledgeRecord {
    pub fn validate(&self) -> Result<(), RecordError> {
        if self.entities.is_empty() {
            return Err(RecordError::NoEntities);
        }
        for e in &self.entities {
            if e.subject.is_empty() {
                return Err(RecordError::EmptyName);
            }
            if e.triples.is_empty() {
                return Err(RecordError::EmptyTriples(e.subject.clone()));
            }
            for (i, (p, o)) in e.triples.iter().enumerate() {
                if p.is_empty() || o.is_empty() {
                    return Err(RecordError::EmptyField {
                        subject: e.subject.clone(),
                    });
                }
                if e.triples[..i].iter().any(|(q, v)| q == p && v == o) {
                    return Err(RecordError::DuplicateTriple {
                        subject: e.subject.clone(),
                        predicate: p.clone(),
                        object: o.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn triple_count(&self) -> usize {
        self.entities.iter().map(|e| e.triples.len()).sum()
    }

    /// Canonical content string used for contamination checks. Ignores `id`.
    pub fn content_key(&self) -> String {
        let mut key = String::new();
        for e in &self.entities {
            key.push_str(&e.subject);
            key.push('\u{1}');
            for (p, o) in &e.triples {
                key.push_str(p);
                key.push('\u{2}');
                key.push_str(o);
                key.push('\u{3}');
            }
            key.push('\u{4}');
        }
        key
    }
}

/// A record aligned with a target sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundedPair {
    #[serde(flatten)]
    pub record: KnowledgeRecord,
    pub text: String,
    pub score: f64,
}

impl GroundedPair {
    pub fn new(record: KnowledgeRecord, text: impl Into<String>, score: f64) -> Self {
        Self {
            record,
            text: text.into(),
            score: score.clamp(0.0, 1.0),
        }
    }
}

/// Groups `(subject, predicate, object)` triples by subject in
/// first-appearance order, dropping repeats within a subject.
pub fn from_rdf_triples<S: AsRef<str>>(
    id: impl Into<String>,
    triples: &[(S, S, S)],
) -> Result<KnowledgeRecord, RecordError> {
    if triples.is_empty() {
        return Err(RecordError::EmptyInput);
    }
    let mut entities: Vec<Entity> = Vec::new();
    for (i, (s, p, o)) in triples.iter().enumerate() {
        let (s, p, o) = (s.as_ref(), p.as_ref(), o.as_ref());
        if s.is_empty() || p.is_empty() || o.is_empty() {
            return Err(RecordError::MalformedTriple(i));
        }
        match entities.iter_mut().find(|e| e.subject == s) {
            Some(e) => {
                e.push(p, o);
            }
            None => {
                let mut e = Entity::new(s);
                e.push(p, o);
                entities.push(e);
            }
        }
    }
    Ok(KnowledgeRecord {
        id: id.into(),
        entities,
    })
}

/// Dialog-act meaning representation: the name slot becomes the subject.
pub fn from_slot_values<S: AsRef<str>>(
    id: impl Into<String>,
    name: &str,
    slots: &[(S, S)],
) -> Result<KnowledgeRecord, RecordError> {
    if name.is_empty() {
        return Err(RecordError::EmptyName);
    }
    let mut e = Entity::new(name);
    for (i, (slot, value)) in slots.iter().enumerate() {
        if slot.as_ref().is_empty() || value.as_ref().is_empty() {
            return Err(RecordError::MalformedTriple(i));
        }
        e.push(slot.as_ref(), value.as_ref());
    }
    if e.triples.is_empty() {
        return Err(RecordError::EmptyTriples(name.into()));
    }
    Ok(KnowledgeRecord {
        id: id.into(),
        entities: alloc::vec![e],
    })
}

/// Infobox-style table: the page title becomes the subject and rows with an
/// empty value are dropped.
pub fn from_table<S: AsRef<str>>(
    id: impl Into<String>,
    title: &str,
    rows: &[(S, S)],
) -> Result<KnowledgeRecord, RecordError> {
    if title.is_empty() {
        return Err(RecordError::EmptyName);
    }
    let mut e = Entity::new(title);
    for (i, (field, value)) in rows.iter().enumerate() {
        if value.as_ref().is_empty() {
            continue;
        }
        if field.as_ref().is_empty() {
            return Err(RecordError::MalformedTriple(i));
        }
        e.push(field.as_ref(), value.as_ref());
    }
    if e.triples.is_empty() {
        return Err(RecordError::EmptyTriples(title.into()));
    }
    Ok(KnowledgeRecord {
        id: id.into(),
        entities: alloc::vec![e],
    })
}

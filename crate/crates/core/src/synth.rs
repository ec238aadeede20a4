//! Template-generated grounded pairs for experiments without a crawled
//! corpus.
//!
//! Family A describes people and their home cities; family B describes
//! restaurants. The two share no predicates. Names are random syllable
//! strings, so a model has to copy them from the record.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{content_unigrams, neighbour_unigrams, round_score, stopwords};
use crate::record::{Entity, GroundedPair, KnowledgeRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
}

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ra", "to", "ve", "su", "ne", "po", "di", "an", "el", "or", "ti", "ba", "ru",
    "ze", "ha", "mo", "li", "sa", "ke", "nu", "fi",
];
const OCCUPATIONS: &[&str] = &[
    "writer",
    "painter",
    "engineer",
    "teacher",
    "doctor",
    "singer",
    "architect",
    "lawyer",
];
const NATIONALITIES: &[&str] = &[
    "Danish", "Polish", "Greek", "Irish", "Dutch", "Swiss", "Czech", "Finnish",
];
const EAT_TYPES: &[&str] = &["restaurant", "pub", "coffee shop"];
const FOODS: &[&str] = &[
    "Italian", "French", "Chinese", "Indian", "Japanese", "English", "Thai",
];
const PRICES: &[&str] = &["cheap", "moderate", "expensive"];
const AREAS: &[&str] = &["city centre", "riverside"];

fn name(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..=3);
    let mut s = String::new();
    for _ in 0..n {
        s.push_str(SYLLABLES.choose(rng).expect("non-empty"));
    }
    let mut c = s.chars();
    let first = c.next().expect("non-empty").to_ascii_uppercase();
    core::iter::once(first).chain(c).collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs.choose(rng).expect("non-empty")
}

fn family_a(rng: &mut ChaCha8Rng) -> (Vec<Entity>, String) {
    let person = name(rng);
    let occupation = pick(rng, OCCUPATIONS);
    let mut p = Entity::new(person.clone());
    p.push("occupation", occupation);
    let nationality = rng.random_bool(0.5).then(|| pick(rng, NATIONALITIES));
    if let Some(n) = nationality {
        p.push("nationality", n);
    }
    let city = rng.random_bool(0.7).then(|| name(rng));
    if let Some(c) = &city {
        p.push("birth place", c.as_str());
    }
    let year = rng
        .random_bool(0.5)
        .then(|| format!("{}", rng.random_range(1900..2000)));
    if let Some(y) = &year {
        p.push("birth year", y.as_str());
    }
    let mut text = format!("{person} is a");
    if let Some(n) = nationality {
        text.push_str(&format!(" {n}"));
    }
    text.push_str(&format!(" {occupation}"));
    if let Some(c) = &city {
        text.push_str(&format!(" born in {c}"));
    }
    if let Some(y) = &year {
        text.push_str(&format!(" in {y}"));
    }
    text.push_str(" .");
    let mut entities = alloc::vec![p];
    if let Some(c) = city {
        if rng.random_bool(0.5) {
            let country = name(rng);
            let mut e = Entity::new(c.clone());
            e.push("country", country.as_str());
            text.push_str(&format!(" {c} is a city in {country} ."));
            entities.push(e);
        }
    }
    (entities, text)
}

fn family_b(rng: &mut ChaCha8Rng) -> (Vec<Entity>, String) {
    let venue = name(rng);
    let eat = pick(rng, EAT_TYPES);
    let food = pick(rng, FOODS);
    let mut e = Entity::new(venue.clone());
    e.push("eat type", eat);
    e.push("food", food);
    let price = rng.random_bool(0.6).then(|| pick(rng, PRICES));
    if let Some(p) = price {
        e.push("price range", p);
    }
    let area = rng.random_bool(0.6).then(|| pick(rng, AREAS));
    if let Some(a) = area {
        e.push("area", a);
    }
    let near = rng.random_bool(0.5).then(|| name(rng));
    if let Some(n) = &near {
        e.push("near", n.as_str());
    }
    let family = rng.random_bool(0.5).then(|| rng.random_bool(0.5));
    if let Some(f) = family {
        e.push("family friendly", if f { "yes" } else { "no" });
    }
    let mut text = format!("{venue} is a");
    if let Some(p) = price {
        text.push_str(&format!(" {p}"));
    }
    text.push_str(&format!(" {food} {eat}"));
    if let Some(a) = area {
        text.push_str(&format!(" in the {a}"));
    }
    if let Some(n) = &near {
        text.push_str(&format!(" near {n}"));
    }
    text.push_str(" .");
    match family {
        Some(true) => text.push_str(" It is family friendly ."),
        Some(false) => text.push_str(" It is not family friendly ."),
        None => {}
    }
    (alloc::vec![e], text)
}

/// Mean round score of the text against each entity's neighbourhood.
fn score(entities: &[Entity], text: &str) -> f64 {
    let stop = stopwords();
    let sent = content_unigrams(text, &stop);
    let total: f64 = entities
        .iter()
        .map(|e| round_score(&sent, &neighbour_unigrams(e, &stop)))
        .sum();
    total / entities.len() as f64
}

/// `n` pairs of one family, deterministic in `seed`. Ids are
/// `"{a|b}-{seed}-{index}"`.
pub fn generate(family: Family, n: usize, seed: u64) -> Vec<GroundedPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tag = match family {
        Family::A => "a",
        Family::B => "b",
    };
    (0..n)
        .map(|i| {
            let (entities, text) = match family {
                Family::A => family_a(&mut rng),
                Family::B => family_b(&mut rng),
            };
            let s = score(&entities, &text);
            GroundedPair::new(
                KnowledgeRecord {
                    id: format!("{tag}-{seed}-{i}"),
                    entities,
                },
                text,
                s,
            )
        })
        .collect()
}

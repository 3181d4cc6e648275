//! Synthetic corpora: template sentences with exact annotations, for smoke
//! tests, overfit checks, and exercising the boundary-mismatch report
//! through deliberately corrupted spans.

use rand::seq::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{
    CharSpan, Domain, EntityAnnotation, EntityType, RawDocument, RelationAnnotation, RelationType,
};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub documents: usize,
    pub seed: u64,
    /// Distractor sentences (no annotations) appended per document.
    pub distractors: usize,
    /// Entity spans to corrupt by one character so they start mid-token.
    pub mismatches: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            documents: 20,
            seed: 0,
            distractors: 1,
            mismatches: 0,
        }
    }
}

/// A span corruption the generator applied, for checking that alignment
/// flags exactly these.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PlantedMismatch {
    pub doc_id: String,
    pub entity_id: String,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub documents: Vec<RawDocument>,
    pub planted: Vec<PlantedMismatch>,
}

const SYMBOLS: &[&str] = &[
    "x", "y", "z", "n", "m", "k", "q", "v", "w", "u", "g", "h", "b", "c", "r", "s",
];

const DESCRIPTIONS: &[&str] = &[
    "total mass",
    "learning rate",
    "step size",
    "graph order",
    "prime count",
    "sample mean",
    "decay constant",
    "wave speed",
    "node degree",
    "error bound",
    "field strength",
    "time horizon",
    "vertex count",
    "noise level",
];

const DISTRACTORS: &[&str] = &[
    "this follows from the preceding lemma .",
    "details appear in the appendix .",
    "the proof proceeds by induction .",
    "related work takes a different route .",
    "we defer the general case .",
];

const DOMAINS: &[Domain] = &[Domain::Cs, Domain::Econ, Domain::Math, Domain::Physics];

struct DocBuilder {
    text: String,
    chars: usize,
    entities: Vec<EntityAnnotation>,
    relations: Vec<RelationAnnotation>,
}

impl DocBuilder {
    fn new() -> Self {
        DocBuilder {
            text: String::new(),
            chars: 0,
            entities: Vec::new(),
            relations: Vec::new(),
        }
    }

    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    fn entity(&mut self, s: &str, entity_type: EntityType) -> String {
        let id = format!("T{}", self.entities.len() + 1);
        let start = self.chars;
        self.push(s);
        self.entities.push(EntityAnnotation {
            id: id.clone(),
            entity_type,
            span: CharSpan::new(start, self.chars),
        });
        id
    }

    fn relation(&mut self, relation_type: RelationType, head: String, tail: String) {
        self.relations.push(RelationAnnotation {
            relation_type,
            head,
            tail,
        });
    }
}

/// Picks `n` distinct items from a pool.
fn pick_distinct<'a>(pool: &[&'a str], n: usize, rng: &mut ChaCha8Rng) -> Vec<&'a str> {
    let picked = rand::seq::index::sample(rng, pool.len(), n);
    picked.iter().map(|i| pool[i]).collect()
}

fn sentence(kind: usize, b: &mut DocBuilder, rng: &mut ChaCha8Rng) {
    match kind {
        // "the total mass is denoted m ."
        0 => {
            let desc = *DESCRIPTIONS.choose(rng).expect("non-empty pool");
            let sym = *SYMBOLS.choose(rng).expect("non-empty pool");
            b.push("the ");
            let head = b.entity(desc, EntityType::Primary);
            b.push(" is denoted ");
            let tail = b.entity(sym, EntityType::Symbol);
            b.push(" . ");
            b.relation(RelationType::Direct, head, tail);
        }
        // "there are n vertex count in total ."
        1 => {
            let desc = *DESCRIPTIONS.choose(rng).expect("non-empty pool");
            let sym = *SYMBOLS.choose(rng).expect("non-empty pool");
            b.push("there are ");
            let tail = b.entity(sym, EntityType::Symbol);
            b.push(" of the ");
            let head = b.entity(desc, EntityType::Primary);
            b.push(" in total . ");
            b.relation(RelationType::Count, head, tail);
        }
        // "we write x or y for the step size ."
        2 => {
            let syms = pick_distinct(SYMBOLS, 2, rng);
            let desc = *DESCRIPTIONS.choose(rng).expect("non-empty pool");
            b.push("we write ");
            let s1 = b.entity(syms[0], EntityType::Symbol);
            b.push(" or ");
            let s2 = b.entity(syms[1], EntityType::Symbol);
            b.push(" for the ");
            let d = b.entity(desc, EntityType::Primary);
            b.push(" . ");
            b.relation(RelationType::Direct, d, s1.clone());
            b.relation(RelationType::CoreferSymbol, s1, s2);
        }
        // "the decay constant , also called the noise level , equals z ."
        3 => {
            let descs = pick_distinct(DESCRIPTIONS, 2, rng);
            let sym = *SYMBOLS.choose(rng).expect("non-empty pool");
            b.push("the ");
            let d1 = b.entity(descs[0], EntityType::Primary);
            b.push(" , also called the ");
            let d2 = b.entity(descs[1], EntityType::Primary);
            b.push(" , equals ");
            let s = b.entity(sym, EntityType::Symbol);
            b.push(" . ");
            b.relation(RelationType::Direct, d1.clone(), s);
            b.relation(RelationType::CoreferDescription, d1, d2);
        }
        // "the time horizon values are denoted u and v ." (a sequence)
        4 => {
            let desc = *DESCRIPTIONS.choose(rng).expect("non-empty pool");
            let syms = pick_distinct(SYMBOLS, 2, rng);
            b.push("the ");
            let d = b.entity(desc, EntityType::Ordered);
            b.push(" values are denoted ");
            let s1 = b.entity(syms[0], EntityType::Symbol);
            b.push(" and ");
            let s2 = b.entity(syms[1], EntityType::Symbol);
            b.push(" . ");
            b.relation(RelationType::Direct, d.clone(), s1);
            b.relation(RelationType::Direct, d, s2);
        }
        _ => unreachable!("five sentence kinds"),
    }
}

/// Generates a deterministic corpus. Every document leads with a cycling
/// sentence kind so all relation and entity types appear in any corpus of
/// five or more documents; mismatch planting shifts the start of a
/// multi-character entity span one character into its first word.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.documents == 0 {
        return Err(Error::Config("a corpus needs at least one document".into()));
    }
    let mut documents = Vec::with_capacity(config.documents);
    for i in 0..config.documents {
        // One stream per document, annotated body drawn before distractors:
        // adding distractors or documents never changes existing annotations.
        let mut rng = ChaCha8Rng::seed_from_u64(
            config
                .seed
                .wrapping_add(0x73796e7468)
                .wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
        );
        let mut b = DocBuilder::new();
        sentence(i % 5, &mut b, &mut rng);
        let extra = rng.random_range(1..=2);
        for _ in 0..extra {
            let kind = rng.random_range(0..5);
            sentence(kind, &mut b, &mut rng);
        }
        for _ in 0..config.distractors {
            let d = DISTRACTORS.choose(&mut rng).expect("non-empty pool");
            b.push(d);
            b.push(" ");
        }
        let text = b.text.trim_end().to_string();
        let doc = RawDocument {
            id: format!("synth-{i:04}"),
            domain: DOMAINS[i % DOMAINS.len()].clone(),
            text,
            entities: b.entities,
            relations: b.relations,
        };
        doc.validate()?;
        documents.push(doc);
    }

    // Corrupt spans round-robin across documents: shift the start of the
    // first eligible (multi-character, not yet corrupted) entity.
    let mut planted = Vec::new();
    let mut cursor = 0usize;
    for _ in 0..config.mismatches {
        let mut placed = false;
        let n_docs = documents.len();
        for offset in 0..n_docs {
            let doc = &mut documents[(cursor + offset) % n_docs];
            let already: Vec<String> = planted
                .iter()
                .filter(|p: &&PlantedMismatch| p.doc_id == doc.id)
                .map(|p| p.entity_id.clone())
                .collect();
            if let Some(e) = doc
                .entities
                .iter_mut()
                .find(|e| e.span.len() > 1 && !already.contains(&e.id))
            {
                e.span = CharSpan::new(e.span.start + 1, e.span.end);
                planted.push(PlantedMismatch {
                    doc_id: doc.id.clone(),
                    entity_id: e.id.clone(),
                });
                cursor = (cursor + offset + 1) % n_docs;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(format!(
                "cannot plant {} mismatches in {} documents",
                config.mismatches, config.documents
            )));
        }
    }
    planted.sort();
    Ok(SynthCorpus {
        documents,
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{self, Preprocess};
    use std::collections::BTreeSet;

    #[test]
    fn generation_is_deterministic() {
        let config = SynthConfig::default();
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.documents.len(), b.documents.len());
        for (x, y) in a.documents.iter().zip(&b.documents) {
            assert_eq!(x.text, y.text);
            assert_eq!(x.entities, y.entities);
            assert_eq!(x.relations, y.relations);
        }
    }

    #[test]
    fn clean_corpora_align_without_mismatches() {
        let corpus = generate(&SynthConfig::default()).unwrap();
        let docs = ingest::align_corpus(corpus.documents, Preprocess::None).unwrap();
        for doc in &docs {
            assert!(doc.warnings.is_empty());
            for e in &doc.entities {
                assert!(!e.mismatch, "{}/{} flagged unexpectedly", doc.raw.id, e.id);
            }
        }
        let report = ingest::boundary_mismatch_report(&docs);
        assert_eq!(report.any_endpoint, 0);
    }

    #[test]
    fn spans_cover_trimmed_words() {
        let corpus = generate(&SynthConfig::default()).unwrap();
        for doc in &corpus.documents {
            let chars: Vec<char> = doc.text.chars().collect();
            for e in &doc.entities {
                let s: String = chars[e.span.start..e.span.end].iter().collect();
                assert!(!s.starts_with(' ') && !s.ends_with(' '), "{s:?}");
                assert!(!s.is_empty());
            }
        }
    }

    #[test]
    fn all_types_appear_and_argument_types_are_consistent() {
        let corpus = generate(&SynthConfig {
            documents: 20,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut seen_rel = BTreeSet::new();
        let mut seen_ent = BTreeSet::new();
        for doc in &corpus.documents {
            let types: std::collections::BTreeMap<&str, EntityType> = doc
                .entities
                .iter()
                .map(|e| (e.id.as_str(), e.entity_type))
                .collect();
            for e in &doc.entities {
                seen_ent.insert(e.entity_type);
            }
            for r in &doc.relations {
                seen_rel.insert(r.relation_type);
                let head = types[r.head.as_str()];
                let tail = types[r.tail.as_str()];
                match r.relation_type {
                    RelationType::Direct => {
                        assert!(matches!(head, EntityType::Primary | EntityType::Ordered));
                        assert_eq!(tail, EntityType::Symbol);
                    }
                    RelationType::Count => {
                        assert_eq!(head, EntityType::Primary);
                        assert_eq!(tail, EntityType::Symbol);
                    }
                    RelationType::CoreferSymbol => {
                        assert_eq!(head, EntityType::Symbol);
                        assert_eq!(tail, EntityType::Symbol);
                    }
                    RelationType::CoreferDescription => {
                        assert_eq!(head, EntityType::Primary);
                        assert_eq!(tail, EntityType::Primary);
                    }
                }
            }
        }
        assert_eq!(seen_rel.len(), RelationType::COUNT);
        assert_eq!(seen_ent.len(), EntityType::COUNT);
    }

    #[test]
    fn ordered_entities_head_two_direct_relations() {
        let corpus = generate(&SynthConfig {
            documents: 10,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut found = false;
        for doc in &corpus.documents {
            for e in &doc.entities {
                if e.entity_type == EntityType::Ordered {
                    found = true;
                    let direct_heads = doc
                        .relations
                        .iter()
                        .filter(|r| r.relation_type == RelationType::Direct && r.head == e.id)
                        .count();
                    assert!(direct_heads >= 2, "{}/{}", doc.id, e.id);
                }
            }
        }
        assert!(found, "corpus of 10 must contain an ordered sequence");
    }

    #[test]
    fn planted_mismatches_are_flagged_exactly() {
        let corpus = generate(&SynthConfig {
            documents: 8,
            mismatches: 5,
            ..SynthConfig::default()
        })
        .unwrap();
        assert_eq!(corpus.planted.len(), 5);
        let docs = ingest::align_corpus(corpus.documents, Preprocess::None).unwrap();
        let mut flagged = Vec::new();
        for doc in &docs {
            for e in &doc.entities {
                if e.mismatch {
                    flagged.push(PlantedMismatch {
                        doc_id: doc.raw.id.clone(),
                        entity_id: e.id.clone(),
                    });
                }
            }
        }
        flagged.sort();
        assert_eq!(flagged, corpus.planted);
    }

    #[test]
    fn distractors_add_text_but_no_annotations() {
        let with = generate(&SynthConfig {
            documents: 4,
            distractors: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let without = generate(&SynthConfig {
            documents: 4,
            distractors: 0,
            ..SynthConfig::default()
        })
        .unwrap();
        for (a, b) in with.documents.iter().zip(&without.documents) {
            assert_eq!(a.entities.len(), b.entities.len());
            assert!(a.text.len() > b.text.len());
        }
    }

    #[test]
    fn zero_documents_is_rejected() {
        assert!(generate(&SynthConfig {
            documents: 0,
            ..SynthConfig::default()
        })
        .is_err());
    }
}

//! Entity types derived from predicted relations.
//!
//! Spans are never typed directly; each predicted relation fixes the types
//! of its two arguments:
//!
//! | relation             | head    | tail   |
//! |----------------------|---------|--------|
//! | Direct               | PRIMARY | SYMBOL |
//! | Count                | PRIMARY | SYMBOL |
//! | Corefer-Symbol       | SYMBOL  | SYMBOL |
//! | Corefer-Description  | PRIMARY | PRIMARY|
//!
//! A span assigned both SYMBOL and PRIMARY by different relations is a
//! conflict; SYMBOL wins and the conflict is counted. After resolution,
//! a span still typed PRIMARY that heads more than one Direct prediction
//! is re-typed ORDERED (it describes several symbols at once).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::{EntityType, RelationType, TokenSpan};
use crate::relation::RelationPrediction;

/// (head type, tail type) implied by a relation type.
#[must_use]
pub fn relation_argument_types(r: RelationType) -> (EntityType, EntityType) {
    match r {
        RelationType::Direct | RelationType::Count => (EntityType::Primary, EntityType::Symbol),
        RelationType::CoreferSymbol => (EntityType::Symbol, EntityType::Symbol),
        RelationType::CoreferDescription => (EntityType::Primary, EntityType::Primary),
    }
}

/// A span with its resolved entity type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TypedMention {
    pub span: TokenSpan,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
}

/// Typing result: one mention per distinct span (sorted by span), plus the
/// number of spans whose relations disagreed about the type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypingOutcome {
    pub mentions: Vec<TypedMention>,
    pub conflicts: usize,
}

/// Assigns an entity type to every span participating in a prediction.
#[must_use]
pub fn assign_entity_types(predictions: &[RelationPrediction]) -> TypingOutcome {
    #[derive(Default)]
    struct Votes {
        symbol: bool,
        primary: bool,
        direct_heads: usize,
    }

    let mut votes: BTreeMap<TokenSpan, Votes> = BTreeMap::new();
    for p in predictions {
        let (head_type, tail_type) = relation_argument_types(p.relation_type);
        for (span, t) in [(p.head, head_type), (p.tail, tail_type)] {
            let v = votes.entry(span).or_default();
            match t {
                EntityType::Symbol => v.symbol = true,
                EntityType::Primary => v.primary = true,
                EntityType::Ordered => unreachable!("no relation implies ORDERED directly"),
            }
        }
        if p.relation_type == RelationType::Direct {
            votes.entry(p.head).or_default().direct_heads += 1;
        }
    }

    let mut conflicts = 0;
    let mentions = votes
        .into_iter()
        .map(|(span, v)| {
            if v.symbol && v.primary {
                conflicts += 1;
            }
            let entity_type = if v.symbol {
                EntityType::Symbol
            } else if v.direct_heads > 1 {
                EntityType::Ordered
            } else {
                EntityType::Primary
            };
            TypedMention { span, entity_type }
        })
        .collect();
    TypingOutcome {
        mentions,
        conflicts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(t: RelationType, h: (usize, usize), ta: (usize, usize)) -> RelationPrediction {
        RelationPrediction {
            relation_type: t,
            head: TokenSpan::new(h.0, h.1),
            tail: TokenSpan::new(ta.0, ta.1),
            score: 1.0,
        }
    }

    fn type_of(outcome: &TypingOutcome, span: (usize, usize)) -> EntityType {
        outcome
            .mentions
            .iter()
            .find(|m| m.span == TokenSpan::new(span.0, span.1))
            .expect("span must be typed")
            .entity_type
    }

    #[test]
    fn each_relation_types_both_arguments() {
        let cases = [
            (RelationType::Direct, EntityType::Primary, EntityType::Symbol),
            (RelationType::Count, EntityType::Primary, EntityType::Symbol),
            (RelationType::CoreferSymbol, EntityType::Symbol, EntityType::Symbol),
            (
                RelationType::CoreferDescription,
                EntityType::Primary,
                EntityType::Primary,
            ),
        ];
        for (rel, head_t, tail_t) in cases {
            assert_eq!(relation_argument_types(rel), (head_t, tail_t));
            let out = assign_entity_types(&[pred(rel, (0, 2), (5, 6))]);
            assert_eq!(out.conflicts, 0);
            assert_eq!(type_of(&out, (0, 2)), head_t);
            assert_eq!(type_of(&out, (5, 6)), tail_t);
        }
    }

    #[test]
    fn double_direct_head_becomes_ordered() {
        let out = assign_entity_types(&[
            pred(RelationType::Direct, (0, 2), (5, 6)),
            pred(RelationType::Direct, (0, 2), (7, 8)),
        ]);
        assert_eq!(type_of(&out, (0, 2)), EntityType::Ordered);
        assert_eq!(type_of(&out, (5, 6)), EntityType::Symbol);
        assert_eq!(type_of(&out, (7, 8)), EntityType::Symbol);
        assert_eq!(out.conflicts, 0);
    }

    #[test]
    fn single_direct_head_stays_primary() {
        let out = assign_entity_types(&[pred(RelationType::Direct, (0, 2), (5, 6))]);
        assert_eq!(type_of(&out, (0, 2)), EntityType::Primary);
    }

    #[test]
    fn count_heads_do_not_contribute_to_ordered() {
        let out = assign_entity_types(&[
            pred(RelationType::Direct, (0, 2), (5, 6)),
            pred(RelationType::Count, (0, 2), (7, 8)),
        ]);
        assert_eq!(type_of(&out, (0, 2)), EntityType::Primary);
    }

    #[test]
    fn symbol_wins_conflicts_and_is_counted() {
        // Span (0,2) is a Direct head (PRIMARY) and a Corefer-Symbol tail
        // (SYMBOL) at the same time.
        let out = assign_entity_types(&[
            pred(RelationType::Direct, (0, 2), (5, 6)),
            pred(RelationType::CoreferSymbol, (9, 10), (0, 2)),
        ]);
        assert_eq!(out.conflicts, 1);
        assert_eq!(type_of(&out, (0, 2)), EntityType::Symbol);
    }

    #[test]
    fn conflicted_symbol_span_is_not_retyped_ordered() {
        // Heads two Directs but also receives SYMBOL: stays SYMBOL because
        // the ORDERED rule only applies to spans resolved as PRIMARY.
        let out = assign_entity_types(&[
            pred(RelationType::Direct, (0, 2), (5, 6)),
            pred(RelationType::Direct, (0, 2), (7, 8)),
            pred(RelationType::CoreferSymbol, (9, 10), (0, 2)),
        ]);
        assert_eq!(type_of(&out, (0, 2)), EntityType::Symbol);
        assert_eq!(out.conflicts, 1);
    }

    #[test]
    fn mentions_are_sorted_and_distinct_by_span() {
        let out = assign_entity_types(&[
            pred(RelationType::Direct, (4, 6), (1, 2)),
            pred(RelationType::CoreferDescription, (4, 6), (8, 9)),
        ]);
        let spans: Vec<TokenSpan> = out.mentions.iter().map(|m| m.span).collect();
        let mut sorted = spans.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(spans, sorted);
        assert_eq!(spans.len(), 3);
    }

    #[test]
    fn no_predictions_yield_no_mentions() {
        let out = assign_entity_types(&[]);
        assert!(out.mentions.is_empty());
        assert_eq!(out.conflicts, 0);
    }
}

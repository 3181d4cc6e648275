//! Corpus loading, text preprocessing, tokenization, and alignment of
//! character-level annotations to token spans.
//!
//! A corpus file holds one JSON document per line:
//!
//! ```json
//! {"id":"doc1","domain":"math","text":"let $x$ be the mass",
//!  "entities":[{"id":"T1","type":"SYMBOL","start":4,"end":7}],
//!  "relations":[{"type":"Direct","head":"T1","tail":"T2"}]}
//! ```
//!
//! All character offsets count Unicode code points in the original text,
//! half-open `[start, end)`. When LaTeX preprocessing is enabled the text is
//! flattened first and annotation spans are projected through the resulting
//! character map before token alignment.

mod latex;
mod tokenize;

pub use latex::{latex_to_text, CharMap, LatexWarning};
pub use tokenize::{tokenize_document, tokenize_with_offsets, TokenizedDocument};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-open span of Unicode code points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CharSpan {
    pub start: usize,
    pub end: usize,
}

impl CharSpan {
    #[must_use]
    pub fn new(start: usize, end: usize) -> Self {
        CharSpan { start, end }
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    #[must_use]
    pub fn overlaps(&self, other: &CharSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Half-open span of token indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    #[must_use]
    pub fn new(start: usize, end: usize) -> Self {
        TokenSpan { start, end }
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    #[must_use]
    pub fn overlaps(&self, other: &TokenSpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// Entity label set. `Ordered` marks symbols that stand for sequences and is
/// only ever produced by relation-driven re-typing, never predicted directly.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum EntityType {
    #[serde(rename = "SYMBOL")]
    Symbol,
    #[serde(rename = "PRIMARY")]
    Primary,
    #[serde(rename = "ORDERED")]
    Ordered,
}

impl EntityType {
    pub const COUNT: usize = 3;

    /// Dense index used for prototype banks and confusion tables.
    #[must_use]
    pub fn index(self) -> usize {
        match self {
            EntityType::Symbol => 0,
            EntityType::Primary => 1,
            EntityType::Ordered => 2,
        }
    }

    #[must_use]
    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(EntityType::Symbol),
            1 => Some(EntityType::Primary),
            2 => Some(EntityType::Ordered),
            _ => None,
        }
    }

    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Symbol => "SYMBOL",
            EntityType::Primary => "PRIMARY",
            EntityType::Ordered => "ORDERED",
        }
    }

    #[must_use]
    pub fn all() -> [EntityType; 3] {
        [EntityType::Symbol, EntityType::Primary, EntityType::Ordered]
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Relation label set linking a head mention to a tail mention.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum RelationType {
    /// Tail symbol is directly described by the head description.
    Direct,
    /// Tail symbol counts instances of the head description.
    Count,
    /// Two symbols refer to the same object.
    #[serde(rename = "Corefer-Symbol")]
    CoreferSymbol,
    /// Two descriptions refer to the same object.
    #[serde(rename = "Corefer-Description")]
    CoreferDescription,
}

impl RelationType {
    pub const COUNT: usize = 4;

    #[must_use]
    pub fn index(self) -> usize {
        match self {
            RelationType::Direct => 0,
            RelationType::Count => 1,
            RelationType::CoreferSymbol => 2,
            RelationType::CoreferDescription => 3,
        }
    }

    #[must_use]
    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(RelationType::Direct),
            1 => Some(RelationType::Count),
            2 => Some(RelationType::CoreferSymbol),
            3 => Some(RelationType::CoreferDescription),
            _ => None,
        }
    }

    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            RelationType::Direct => "Direct",
            RelationType::Count => "Count",
            RelationType::CoreferSymbol => "Corefer-Symbol",
            RelationType::CoreferDescription => "Corefer-Description",
        }
    }

    #[must_use]
    pub fn all() -> [RelationType; 4] {
        [
            RelationType::Direct,
            RelationType::Count,
            RelationType::CoreferSymbol,
            RelationType::CoreferDescription,
        ]
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scientific domain a document was drawn from. Unknown tags round-trip
/// unchanged so corpora from new domains load without code changes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub enum Domain {
    Cs,
    Econ,
    Math,
    Physics,
    Other(String),
}

impl Domain {
    #[must_use]
    pub fn as_str(&self) -> &str {
        match self {
            Domain::Cs => "cs",
            Domain::Econ => "econ",
            Domain::Math => "math",
            Domain::Physics => "physics",
            Domain::Other(s) => s.as_str(),
        }
    }
}

impl From<String> for Domain {
    fn from(s: String) -> Self {
        match s.as_str() {
            "cs" => Domain::Cs,
            "econ" => Domain::Econ,
            "math" => Domain::Math,
            "physics" => Domain::Physics,
            _ => Domain::Other(s),
        }
    }
}

impl From<Domain> for String {
    fn from(d: Domain) -> Self {
        d.as_str().to_string()
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Gold entity annotation in original-text character offsets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityAnnotation {
    pub id: String,
    #[serde(rename = "type")]
    pub entity_type: EntityType,
    #[serde(flatten)]
    pub span: CharSpan,
}

/// Gold relation annotation referencing entity ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationAnnotation {
    #[serde(rename = "type")]
    pub relation_type: RelationType,
    pub head: String,
    pub tail: String,
}

/// One annotated document as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub id: String,
    pub domain: Domain,
    pub text: String,
    #[serde(default)]
    pub entities: Vec<EntityAnnotation>,
    #[serde(default)]
    pub relations: Vec<RelationAnnotation>,
}

impl RawDocument {
    /// Structural checks that JSON parsing cannot express: spans inside the
    /// text, non-empty spans, unique entity ids, resolvable relation ids.
    pub fn validate(&self) -> Result<()> {
        let text_len = self.text.chars().count();
        let mut ids = BTreeSet::new();
        for e in &self.entities {
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Validation(format!(
                    "document {}: duplicate entity id {}",
                    self.id, e.id
                )));
            }
            if e.span.is_empty() {
                return Err(Error::Validation(format!(
                    "document {}: entity {} has empty span [{}, {})",
                    self.id, e.id, e.span.start, e.span.end
                )));
            }
            if e.span.end > text_len {
                return Err(Error::Validation(format!(
                    "document {}: entity {} span [{}, {}) exceeds text length {}",
                    self.id, e.id, e.span.start, e.span.end, text_len
                )));
            }
        }
        for r in &self.relations {
            for endpoint in [&r.head, &r.tail] {
                if !ids.contains(endpoint.as_str()) {
                    return Err(Error::Validation(format!(
                        "document {}: relation {} references unknown entity id {}",
                        self.id, r.relation_type, endpoint
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Text preprocessing applied before tokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    /// Tokenize the raw text as-is.
    None,
    /// Flatten LaTeX markup, keeping math mode verbatim.
    #[default]
    LatexToText,
}

/// Loads a JSONL corpus, validating every document.
pub fn load_corpus(path: &Path) -> Result<Vec<RawDocument>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = std::io::BufReader::new(file);
    let mut docs = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: display.clone(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        doc.validate().map_err(|e| match e {
            Error::Validation(msg) => Error::Format {
                path: display.clone(),
                line: idx + 1,
                message: msg,
            },
            other => other,
        })?;
        if !seen_ids.insert(doc.id.clone()) {
            return Err(Error::Format {
                path: display.clone(),
                line: idx + 1,
                message: format!("duplicate document id {}", doc.id),
            });
        }
        docs.push(doc);
    }
    Ok(docs)
}

/// Writes a corpus in the same JSONL layout `load_corpus` reads.
pub fn save_corpus(path: &Path, docs: &[RawDocument]) -> Result<()> {
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut w = BufWriter::new(file);
    for doc in docs {
        serde_json::to_writer(&mut w, doc)?;
        w.write_all(b"\n").map_err(|e| Error::io(&display, e))?;
    }
    w.flush().map_err(|e| Error::io(&display, e))?;
    Ok(())
}

/// Entity annotation carried through preprocessing and tokenization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignedEntity {
    pub id: String,
    pub entity_type: EntityType,
    /// Span in the original text (as annotated).
    pub char_span: CharSpan,
    /// Span in the preprocessed text.
    pub clean_span: CharSpan,
    /// Minimal token span covering every token that overlaps `clean_span`.
    pub token_span: TokenSpan,
    /// True when the annotation boundaries do not coincide with token
    /// boundaries, i.e. the span starts or ends inside a token.
    pub mismatch: bool,
}

/// Document ready for the model: tokens plus token-aligned annotations.
#[derive(Debug, Clone)]
pub struct AlignedDocument {
    pub raw: RawDocument,
    pub tokenized: TokenizedDocument,
    pub entities: Vec<AlignedEntity>,
    pub warnings: Vec<LatexWarning>,
}

impl AlignedDocument {
    #[must_use]
    pub fn entity_by_id(&self, id: &str) -> Option<&AlignedEntity> {
        self.entities.iter().find(|e| e.id == id)
    }

    /// Gold relations as (type, head token span, tail token span).
    #[must_use]
    pub fn gold_relation_spans(&self) -> Vec<(RelationType, TokenSpan, TokenSpan)> {
        self.raw
            .relations
            .iter()
            .filter_map(|r| {
                let head = self.entity_by_id(&r.head)?;
                let tail = self.entity_by_id(&r.tail)?;
                Some((r.relation_type, head.token_span, tail.token_span))
            })
            .collect()
    }

    /// Distinct (token span, type) pairs over entities that participate in
    /// at least one relation. This is the mention set scored by span-level
    /// evaluation.
    #[must_use]
    pub fn gold_relation_mentions(&self) -> Vec<(TokenSpan, EntityType)> {
        let mut participants = BTreeSet::new();
        for r in &self.raw.relations {
            participants.insert(r.head.as_str());
            participants.insert(r.tail.as_str());
        }
        let mut out = BTreeSet::new();
        for e in &self.entities {
            if participants.contains(e.id.as_str()) {
                out.insert((e.token_span, e.entity_type));
            }
        }
        out.into_iter().collect()
    }

    /// Distinct gold mention spans over all entities, used for mention
    /// supervision and recall measurements.
    #[must_use]
    pub fn gold_spans(&self) -> Vec<TokenSpan> {
        let set: BTreeSet<TokenSpan> = self.entities.iter().map(|e| e.token_span).collect();
        set.into_iter().collect()
    }
}

/// Projects one document's annotations onto its tokenization.
///
/// Every annotation must survive preprocessing (at least one character kept)
/// and overlap at least one token; anything else is a validation error
/// naming the entity.
pub fn align_annotations(
    doc: &RawDocument,
    tokenized: &TokenizedDocument,
) -> Result<Vec<AlignedEntity>> {
    let mut out = Vec::with_capacity(doc.entities.len());
    for e in &doc.entities {
        let clean_span = tokenized
            .char_map
            .project_span(&e.span)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "document {}: entity {} span [{}, {}) was removed by preprocessing",
                    doc.id, e.id, e.span.start, e.span.end
                ))
            })?;
        let token_span = covering_token_span(&tokenized.offsets, &clean_span).ok_or_else(|| {
            Error::Validation(format!(
                "document {}: entity {} span [{}, {}) covers no tokens",
                doc.id, e.id, e.span.start, e.span.end
            ))
        })?;
        let first = tokenized.offsets[token_span.start];
        let last = tokenized.offsets[token_span.end - 1];
        let mismatch = clean_span.start != first.start || clean_span.end != last.end;
        out.push(AlignedEntity {
            id: e.id.clone(),
            entity_type: e.entity_type,
            char_span: e.span,
            clean_span,
            token_span,
            mismatch,
        });
    }
    Ok(out)
}

/// Minimal token span covering all tokens that overlap `span`. Token offsets
/// are sorted and non-overlapping, so a linear scan with early exit is fine
/// at document scale; binary search would only obscure it.
fn covering_token_span(offsets: &[CharSpan], span: &CharSpan) -> Option<TokenSpan> {
    let mut first = None;
    let mut last = None;
    for (i, tok) in offsets.iter().enumerate() {
        if tok.start >= span.end {
            break;
        }
        if tok.overlaps(span) {
            if first.is_none() {
                first = Some(i);
            }
            last = Some(i);
        }
    }
    match (first, last) {
        (Some(f), Some(l)) => Some(TokenSpan::new(f, l + 1)),
        _ => None,
    }
}

/// Preprocesses, tokenizes, and aligns a whole corpus.
pub fn align_corpus(docs: Vec<RawDocument>, preprocess: Preprocess) -> Result<Vec<AlignedDocument>> {
    docs.into_iter()
        .map(|doc| {
            let (tokenized, warnings) = tokenize_document(&doc.text, preprocess);
            let entities = align_annotations(&doc, &tokenized)?;
            Ok(AlignedDocument {
                raw: doc,
                tokenized,
                entities,
                warnings,
            })
        })
        .collect()
}

/// Counts of annotation/tokenizer boundary disagreements over gold relation
/// instances. Each relation contributes one instance with two endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MismatchReport {
    pub total_relations: usize,
    pub any_endpoint: usize,
    pub both_endpoints: usize,
}

impl MismatchReport {
    /// Fraction of relation instances with at least one shifted endpoint.
    pub fn any_rate(&self) -> Result<f64> {
        self.rate(self.any_endpoint)
    }

    /// Fraction of relation instances with both endpoints shifted.
    pub fn both_rate(&self) -> Result<f64> {
        self.rate(self.both_endpoints)
    }

    fn rate(&self, numerator: usize) -> Result<f64> {
        if self.total_relations == 0 {
            return Err(Error::UndefinedRate(
                "mismatch rate over zero relation instances".to_string(),
            ));
        }
        Ok(numerator as f64 / self.total_relations as f64)
    }
}

/// Tallies boundary mismatches across a corpus. Documents without relations
/// contribute nothing; a corpus with zero relation instances yields a report
/// whose rates are undefined-rate errors rather than NaN.
pub fn boundary_mismatch_report(docs: &[AlignedDocument]) -> MismatchReport {
    let mut report = MismatchReport {
        total_relations: 0,
        any_endpoint: 0,
        both_endpoints: 0,
    };
    for doc in docs {
        let by_id: BTreeMap<&str, &AlignedEntity> =
            doc.entities.iter().map(|e| (e.id.as_str(), e)).collect();
        for r in &doc.raw.relations {
            let (Some(head), Some(tail)) = (by_id.get(r.head.as_str()), by_id.get(r.tail.as_str()))
            else {
                continue;
            };
            report.total_relations += 1;
            if head.mismatch || tail.mismatch {
                report.any_endpoint += 1;
            }
            if head.mismatch && tail.mismatch {
                report.both_endpoints += 1;
            }
        }
    }
    report
}

//! Scoring: four-mode mention evaluation, strict and overlap-tolerant
//! relation evaluation, entity recall, and the candidate-budget sweep.
//!
//! Mention scoring follows the boundary/type error taxonomy with COR, INC,
//! PAR, MIS, and SPU counts and four measures over one shared one-to-one
//! matching: `strict` (boundaries and type), `exact` (boundaries only),
//! `partial` (half credit for overlapping boundaries), and `type` (type on
//! any overlap). By construction partial >= exact >= strict and
//! type >= strict on every corpus.
//!
//! Relation scoring matches predicted triples to gold one-to-one. Exact
//! triple matches are credited first in both modes; the overlap mode then
//! lets remaining predictions, in score order, claim gold whose endpoints
//! both pass an IOU threshold. Crediting exact matches first makes the
//! overlap scores dominate the strict ones pointwise, so loosening the
//! matcher can never lower a score.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AlignedDocument, Domain, RelationType, TokenSpan};
use crate::model::JointModel;
use crate::relation::{self, RelationPrediction};
use crate::typing::TypedMention;

/// Intersection over union of two token spans; 0 when disjoint or empty.
#[must_use]
pub fn span_iou(a: &TokenSpan, b: &TokenSpan) -> f64 {
    let inter = a.start.max(b.start)..a.end.min(b.end);
    let inter = inter.end.saturating_sub(inter.start);
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Precision/recall/F1 triple. Undefined ratios (zero denominators) are
/// reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    #[must_use]
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }

    #[must_use]
    pub fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        Prf::new(ratio(tp, predicted), ratio(tp, gold))
    }
}

// ---------------------------------------------------------------------------
// Mention evaluation
// ---------------------------------------------------------------------------

/// The four mention measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NerMode {
    Strict,
    Exact,
    Partial,
    Type,
}

impl NerMode {
    pub const ALL: [NerMode; 4] = [NerMode::Strict, NerMode::Exact, NerMode::Partial, NerMode::Type];
}

/// Outcome counts for one measure: correct, wrong, partially correct
/// (half credit), missed gold, and spurious prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NerCounts {
    pub cor: usize,
    pub inc: usize,
    pub par: usize,
    pub mis: usize,
    pub spu: usize,
}

impl NerCounts {
    /// Gold total under this measure.
    #[must_use]
    pub fn possible(&self) -> usize {
        self.cor + self.inc + self.par + self.mis
    }

    /// Prediction total under this measure.
    #[must_use]
    pub fn actual(&self) -> usize {
        self.cor + self.inc + self.par + self.spu
    }

    #[must_use]
    pub fn prf(&self) -> Prf {
        let credit = self.cor as f64 + 0.5 * self.par as f64;
        let ratio = |den: usize| if den == 0 { 0.0 } else { credit / den as f64 };
        Prf::new(ratio(self.actual()), ratio(self.possible()))
    }

    fn add(&mut self, other: &NerCounts) {
        self.cor += other.cor;
        self.inc += other.inc;
        self.par += other.par;
        self.mis += other.mis;
        self.spu += other.spu;
    }
}

/// Counts and scores of one measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NerModeScores {
    #[serde(flatten)]
    pub counts: NerCounts,
    #[serde(flatten)]
    pub scores: Prf,
}

/// Micro-averaged mention scores for all four measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NerReport {
    pub strict: NerModeScores,
    pub exact: NerModeScores,
    pub partial: NerModeScores,
    #[serde(rename = "type")]
    pub type_match: NerModeScores,
}

impl NerReport {
    #[must_use]
    pub fn mode(&self, mode: NerMode) -> &NerModeScores {
        match mode {
            NerMode::Strict => &self.strict,
            NerMode::Exact => &self.exact,
            NerMode::Partial => &self.partial,
            NerMode::Type => &self.type_match,
        }
    }
}

/// One document's predicted and gold mentions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NerDocument {
    pub predicted: Vec<TypedMention>,
    pub gold: Vec<TypedMention>,
}

/// Matches predictions to gold one-to-one and tallies all four measures.
///
/// Matching is two-phase and input-order independent: exact-boundary pairs
/// first (preferring same-type gold), then best-overlap pairs for whatever
/// remains. Leftover predictions are spurious, leftover gold is missed.
fn ner_count_document(doc: &NerDocument, counts: &mut [NerCounts; 4]) {
    let mut preds: Vec<&TypedMention> = doc.predicted.iter().collect();
    preds.sort_unstable();
    let mut gold: Vec<&TypedMention> = doc.gold.iter().collect();
    gold.sort_unstable();

    let mut gold_used = vec![false; gold.len()];
    let mut matches: Vec<(&TypedMention, &TypedMention)> = Vec::new();
    let mut leftover: Vec<&TypedMention> = Vec::new();

    for p in preds {
        let same_span = |g: &&TypedMention| g.span == p.span;
        let pick = gold
            .iter()
            .enumerate()
            .position(|(gi, g)| !gold_used[gi] && same_span(g) && g.entity_type == p.entity_type)
            .or_else(|| {
                gold.iter()
                    .enumerate()
                    .position(|(gi, g)| !gold_used[gi] && same_span(g))
            });
        if let Some(gi) = pick {
            gold_used[gi] = true;
            matches.push((p, gold[gi]));
        } else {
            leftover.push(p);
        }
    }
    for p in leftover {
        let mut best: Option<(f64, usize)> = None;
        for (gi, g) in gold.iter().enumerate() {
            if gold_used[gi] {
                continue;
            }
            let iou = span_iou(&p.span, &g.span);
            if iou > 0.0 && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, gi));
            }
        }
        if let Some((_, gi)) = best {
            gold_used[gi] = true;
            matches.push((p, gold[gi]));
        } else {
            for c in counts.iter_mut() {
                c.spu += 1;
            }
        }
    }
    for (gi, _) in gold.iter().enumerate() {
        if !gold_used[gi] {
            for c in counts.iter_mut() {
                c.mis += 1;
            }
        }
    }

    for (p, g) in matches {
        let boundaries = p.span == g.span;
        let type_ok = p.entity_type == g.entity_type;
        for (c, mode) in counts.iter_mut().zip(NerMode::ALL) {
            match mode {
                NerMode::Strict => {
                    if boundaries && type_ok {
                        c.cor += 1;
                    } else {
                        c.inc += 1;
                    }
                }
                NerMode::Exact => {
                    if boundaries {
                        c.cor += 1;
                    } else {
                        c.inc += 1;
                    }
                }
                NerMode::Partial => {
                    if boundaries {
                        c.cor += 1;
                    } else {
                        c.par += 1;
                    }
                }
                NerMode::Type => {
                    if type_ok {
                        c.cor += 1;
                    } else {
                        c.inc += 1;
                    }
                }
            }
        }
    }
}

/// Micro-averaged four-measure mention evaluation over a corpus.
#[must_use]
pub fn ner_evaluate(docs: &[NerDocument]) -> NerReport {
    let mut counts = [NerCounts::default(); 4];
    for doc in docs {
        let mut doc_counts = [NerCounts::default(); 4];
        ner_count_document(doc, &mut doc_counts);
        for (total, d) in counts.iter_mut().zip(&doc_counts) {
            total.add(d);
        }
    }
    let scores = |c: NerCounts| NerModeScores {
        counts: c,
        scores: c.prf(),
    };
    NerReport {
        strict: scores(counts[0]),
        exact: scores(counts[1]),
        partial: scores(counts[2]),
        type_match: scores(counts[3]),
    }
}

// ---------------------------------------------------------------------------
// Relation evaluation
// ---------------------------------------------------------------------------

/// How predicted triples may claim gold triples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MatchMode {
    /// Type and both endpoint boundaries must be identical.
    Strict,
    /// Type must match and both endpoints must have IOU strictly above the
    /// threshold. Exact matches are credited first.
    Iou(f64),
}

impl MatchMode {
    pub fn validate(&self) -> Result<()> {
        if let MatchMode::Iou(t) = *self {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!(
                    "IOU threshold must be in (0, 1], got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// A gold relation triple over token spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GoldRelation {
    #[serde(rename = "type")]
    pub relation_type: RelationType,
    pub head: TokenSpan,
    pub tail: TokenSpan,
}

/// One document's predictions and gold, tagged with its domain for the
/// per-domain breakdown.
#[derive(Debug, Clone)]
pub struct ReDocument {
    pub domain: Domain,
    pub predicted: Vec<RelationPrediction>,
    pub gold: Vec<GoldRelation>,
}

impl ReDocument {
    #[must_use]
    pub fn from_aligned(doc: &AlignedDocument, predicted: Vec<RelationPrediction>) -> Self {
        ReDocument {
            domain: doc.raw.domain.clone(),
            predicted,
            gold: doc
                .gold_relation_spans()
                .into_iter()
                .map(|(relation_type, head, tail)| GoldRelation {
                    relation_type,
                    head,
                    tail,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ReCounts {
    tp: usize,
    fp: usize,
    fn_: usize,
}

impl ReCounts {
    fn prf(&self) -> Prf {
        Prf::from_counts(self.tp, self.tp + self.fp, self.tp + self.fn_)
    }
}

/// Matches one document's predictions to its gold, returning true/false
/// positive and false negative counts per relation type.
///
/// A prediction and a gold triple can only pair when their types agree, so
/// the matching decomposes by type. Phase one pairs identical triples.
/// Phase two (overlap mode only) walks the remaining predictions from the
/// highest score down and lets each claim the unmatched gold with the
/// largest combined endpoint IOU among those whose endpoints both exceed
/// the threshold.
fn match_document(doc: &ReDocument, mode: MatchMode) -> BTreeMap<RelationType, ReCounts> {
    let mut counts: BTreeMap<RelationType, ReCounts> = BTreeMap::new();
    let mut preds: Vec<&RelationPrediction> = doc.predicted.iter().collect();
    preds.sort_unstable_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("prediction scores are finite")
            .then_with(|| a.span_key().cmp(&b.span_key()))
            .then_with(|| a.relation_type.index().cmp(&b.relation_type.index()))
    });
    let mut gold: Vec<&GoldRelation> = doc.gold.iter().collect();
    gold.sort_unstable();
    let mut gold_used = vec![false; gold.len()];

    let mut unmatched: Vec<&RelationPrediction> = Vec::new();
    for p in preds {
        let exact = gold.iter().enumerate().position(|(gi, g)| {
            !gold_used[gi]
                && g.relation_type == p.relation_type
                && g.head == p.head
                && g.tail == p.tail
        });
        if let Some(gi) = exact {
            gold_used[gi] = true;
            counts.entry(p.relation_type).or_default().tp += 1;
        } else {
            unmatched.push(p);
        }
    }

    if let MatchMode::Iou(threshold) = mode {
        for p in unmatched.drain(..) {
            let mut best: Option<(f64, usize)> = None;
            for (gi, g) in gold.iter().enumerate() {
                if gold_used[gi] || g.relation_type != p.relation_type {
                    continue;
                }
                let head_iou = span_iou(&p.head, &g.head);
                let tail_iou = span_iou(&p.tail, &g.tail);
                if head_iou > threshold && tail_iou > threshold {
                    let combined = head_iou + tail_iou;
                    if best.is_none_or(|(b, _)| combined > b) {
                        best = Some((combined, gi));
                    }
                }
            }
            if let Some((_, gi)) = best {
                gold_used[gi] = true;
                counts.entry(p.relation_type).or_default().tp += 1;
            } else {
                counts.entry(p.relation_type).or_default().fp += 1;
            }
        }
    } else {
        for p in unmatched {
            counts.entry(p.relation_type).or_default().fp += 1;
        }
    }

    for (gi, g) in gold.iter().enumerate() {
        if !gold_used[gi] {
            counts.entry(g.relation_type).or_default().fn_ += 1;
        }
    }
    counts
}

/// Micro scores, macro F1 over the types present in gold, and per-type
/// scores for one slice of the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReScores {
    pub micro: Prf,
    pub macro_f1: f64,
    pub per_type: BTreeMap<String, Prf>,
}

fn summarize(counts: &BTreeMap<RelationType, ReCounts>) -> ReScores {
    let mut total = ReCounts::default();
    let mut per_type = BTreeMap::new();
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    for (t, c) in counts {
        total.tp += c.tp;
        total.fp += c.fp;
        total.fn_ += c.fn_;
        let prf = c.prf();
        per_type.insert(t.as_str().to_string(), prf);
        if c.tp + c.fn_ > 0 {
            macro_sum += prf.f1;
            macro_n += 1;
        }
    }
    ReScores {
        micro: total.prf(),
        macro_f1: if macro_n == 0 { 0.0 } else { macro_sum / macro_n as f64 },
        per_type,
    }
}

/// Corpus-level relation scores with a per-domain breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReReport {
    pub overall: ReScores,
    pub per_domain: BTreeMap<String, ReScores>,
}

pub fn re_evaluate(docs: &[ReDocument], mode: MatchMode) -> Result<ReReport> {
    mode.validate()?;
    let mut overall: BTreeMap<RelationType, ReCounts> = BTreeMap::new();
    let mut domains: BTreeMap<String, BTreeMap<RelationType, ReCounts>> = BTreeMap::new();
    for doc in docs {
        let counts = match_document(doc, mode);
        let slot = domains.entry(doc.domain.as_str().to_string()).or_default();
        for (t, c) in counts {
            let acc = overall.entry(t).or_default();
            acc.tp += c.tp;
            acc.fp += c.fp;
            acc.fn_ += c.fn_;
            let acc = slot.entry(t).or_default();
            acc.tp += c.tp;
            acc.fp += c.fp;
            acc.fn_ += c.fn_;
        }
    }
    Ok(ReReport {
        overall: summarize(&overall),
        per_domain: domains
            .into_iter()
            .map(|(d, c)| (d, summarize(&c)))
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Entity recall and the candidate-budget sweep
// ---------------------------------------------------------------------------

/// (hits, total): how many gold spans appear among the candidates.
#[must_use]
pub fn entity_recall_counts(candidates: &[TokenSpan], gold: &[TokenSpan]) -> (usize, usize) {
    let set: BTreeSet<&TokenSpan> = candidates.iter().collect();
    let hits = gold.iter().filter(|s| set.contains(s)).count();
    (hits, gold.len())
}

/// One sweep measurement. All values are fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub entity_recall: f64,
}

/// Renders sweep rows as CSV. Score columns are percentages.
#[must_use]
pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("k,p,r,f,entity_recall\n");
    for row in rows {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6}",
            row.k,
            100.0 * row.precision,
            100.0 * row.recall,
            100.0 * row.f1,
            100.0 * row.entity_recall,
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Measures micro relation scores and gold-span recall as the candidate
/// budget k varies.
///
/// Spans are scored once per document and pair logits are computed once at
/// the largest k; smaller budgets reuse them, since the candidate list of a
/// smaller k is a prefix of the larger one's.
pub fn k_sweep(
    model: &JointModel,
    docs: &[AlignedDocument],
    ks: &[usize],
    mode: MatchMode,
) -> Result<Vec<SweepRow>> {
    mode.validate()?;
    if ks.contains(&0) {
        return Err(Error::Config("sweep budgets must be positive".into()));
    }
    let Some(&k_max) = ks.iter().max() else {
        return Ok(Vec::new());
    };

    let mut re_docs: Vec<Vec<ReDocument>> = vec![Vec::with_capacity(docs.len()); ks.len()];
    let mut recall_hits = vec![0usize; ks.len()];
    let mut recall_total = 0usize;
    for doc in docs {
        let scored = model.score_document(&doc.tokenized.tokens)?;
        let classified = model.classify_top_k(&scored, k_max)?;
        let gold_spans = doc.gold_spans();
        recall_total += gold_spans.len();
        for (slot, &k) in ks.iter().enumerate() {
            let kc = k.min(classified.spans.len());
            let rows: Vec<usize> = classified
                .pairs
                .iter()
                .enumerate()
                .filter_map(|(row, &(a, b))| (a < kc && b < kc).then_some(row))
                .collect();
            let pairs: Vec<(usize, usize)> = rows.iter().map(|&r| classified.pairs[r]).collect();
            let logits = classified.logits.select_rows(&rows);
            let raw = relation::predict_relations(&pairs, &classified.spans, &logits);
            let predictions = relation::deduplicate_predictions(&raw);
            re_docs[slot].push(ReDocument::from_aligned(doc, predictions));
            let (hits, _) = entity_recall_counts(&classified.spans[..kc], &gold_spans);
            recall_hits[slot] += hits;
        }
    }
    if recall_total == 0 {
        return Err(Error::UndefinedRate(
            "entity recall needs at least one gold span in the sweep corpus".into(),
        ));
    }

    let mut rows = Vec::with_capacity(ks.len());
    for (slot, &k) in ks.iter().enumerate() {
        let report = re_evaluate(&re_docs[slot], mode)?;
        rows.push(SweepRow {
            k,
            precision: report.overall.micro.precision,
            recall: report.overall.micro.recall,
            f1: report.overall.micro.f1,
            entity_recall: recall_hits[slot] as f64 / recall_total as f64,
        });
    }
    Ok(rows)
}

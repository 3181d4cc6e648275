//! Soft mention detection over enumerated spans.
//!
//! Every contiguous token span up to a length cap is a candidate. A span is
//! pooled into a single vector and scored by its best dot product against
//! the entity-type prototypes; the top-k spans per document survive to
//! relation classification. There is no hard mention classifier: spans are
//! only ranked, and entity types are assigned later from predicted
//! relations.
//!
//! Training pulls gold spans above non-spans with a similarity-space margin
//! loss, averaged over all (gold, non-gold) pairs of a downsampled
//! candidate set that always retains every gold span.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{EntityType, TokenSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MentionConfig {
    /// Longest candidate span in tokens.
    pub max_span_len: usize,
    pub pooling: Pooling,
    /// Margin of the mention ranking loss.
    pub margin: f64,
    /// Number of spans kept per document for the mention loss.
    pub downsample: usize,
}

impl Default for MentionConfig {
    fn default() -> Self {
        MentionConfig {
            max_span_len: 16,
            pooling: Pooling::Mean,
            margin: 1.0,
            downsample: 1000,
        }
    }
}

impl MentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_span_len == 0 {
            return Err(Error::Config("max_span_len must be at least 1".into()));
        }
        if self.downsample == 0 {
            return Err(Error::Config("downsample must be at least 1".into()));
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be finite and positive, got {}", self.margin)));
        }
        Ok(())
    }
}

/// One learned vector per entity type, rows indexed by
/// [`EntityType::index`]. A span's mention score is its best dot product
/// against any row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntityPrototypeBank {
    vectors: Array2<f64>,
}

impl EntityPrototypeBank {
    pub fn new_random(hidden_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0 / (hidden_size as f64).sqrt()).expect("finite std");
        EntityPrototypeBank {
            vectors: Array2::from_shape_fn((EntityType::COUNT, hidden_size), |_| normal.sample(rng)),
        }
    }

    pub fn from_vectors(vectors: Array2<f64>) -> Result<Self> {
        if vectors.nrows() != EntityType::COUNT {
            return Err(Error::Validation(format!(
                "entity prototype bank needs {} rows, got {}",
                EntityType::COUNT,
                vectors.nrows()
            )));
        }
        Ok(EntityPrototypeBank { vectors })
    }

    #[must_use]
    pub fn prototype(&self, t: EntityType) -> ArrayView1<'_, f64> {
        self.vectors.row(t.index())
    }

    #[must_use]
    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn vectors_mut(&mut self) -> &mut Array2<f64> {
        &mut self.vectors
    }

    #[must_use]
    pub fn hidden_size(&self) -> usize {
        self.vectors.ncols()
    }
}

/// All spans of 1..=max_span_len tokens, ordered by (start, end). The count
/// is `sum over s of min(max_span_len, len - s)`.
#[must_use]
pub fn enumerate_spans(len: usize, max_span_len: usize) -> Vec<TokenSpan> {
    let mut spans = Vec::new();
    for start in 0..len {
        let cap = max_span_len.min(len - start);
        for l in 1..=cap {
            spans.push(TokenSpan::new(start, start + l));
        }
    }
    spans
}

/// What the pooling backward pass needs: mean routes evenly, max routes to
/// the argmax row per dimension.
#[derive(Debug, Clone)]
pub enum PoolTrace {
    Mean { span: TokenSpan },
    Max { span: TokenSpan, arg_rows: Vec<usize> },
}

/// Pools token rows `span.start..span.end` into one vector.
#[must_use]
pub fn pool_span(embeddings: &ArrayView2<f64>, span: &TokenSpan, pooling: Pooling) -> Array1<f64> {
    pool_span_trace(embeddings, span, pooling).0
}

pub(crate) fn pool_span_trace(
    embeddings: &ArrayView2<f64>,
    span: &TokenSpan,
    pooling: Pooling,
) -> (Array1<f64>, PoolTrace) {
    assert!(span.start < span.end && span.end <= embeddings.nrows(), "span out of bounds");
    let d = embeddings.ncols();
    match pooling {
        Pooling::Mean => {
            let mut acc = Array1::zeros(d);
            for t in span.start..span.end {
                acc += &embeddings.row(t);
            }
            acc /= span.len() as f64;
            (acc, PoolTrace::Mean { span: *span })
        }
        Pooling::Max => {
            let mut out = embeddings.row(span.start).to_owned();
            let mut arg_rows = vec![span.start; d];
            for t in span.start + 1..span.end {
                for i in 0..d {
                    let v = embeddings[[t, i]];
                    if v > out[i] {
                        out[i] = v;
                        arg_rows[i] = t;
                    }
                }
            }
            (out, PoolTrace::Max { span: *span, arg_rows })
        }
    }
}

/// Routes a pooled-vector gradient back onto token rows.
pub(crate) fn pool_backward(trace: &PoolTrace, d_pooled: &ArrayView1<f64>, d_embeddings: &mut Array2<f64>) {
    match trace {
        PoolTrace::Mean { span } => {
            let inv = 1.0 / span.len() as f64;
            for t in span.start..span.end {
                let mut row = d_embeddings.row_mut(t);
                for (i, &g) in d_pooled.iter().enumerate() {
                    row[i] += g * inv;
                }
            }
        }
        PoolTrace::Max { arg_rows, .. } => {
            for (i, (&t, &g)) in arg_rows.iter().zip(d_pooled.iter()).enumerate() {
                d_embeddings[[t, i]] += g;
            }
        }
    }
}

/// Pools every span of a document at once. Row `s` of the result is the
/// pooled vector for `spans[s]`.
pub fn pool_all_spans(
    embeddings: &ArrayView2<f64>,
    spans: &[TokenSpan],
    pooling: Pooling,
) -> (Array2<f64>, Vec<PoolTrace>) {
    let mut pooled = Array2::zeros((spans.len(), embeddings.ncols()));
    let mut traces = Vec::with_capacity(spans.len());
    for (s, span) in spans.iter().enumerate() {
        let (vec, trace) = pool_span_trace(embeddings, span, pooling);
        pooled.row_mut(s).assign(&vec);
        traces.push(trace);
    }
    (pooled, traces)
}

/// Mention score per span: the maximum dot product against any prototype.
#[must_use]
pub fn score_spans(pooled: &ArrayView2<f64>, bank: &EntityPrototypeBank) -> Array1<f64> {
    let sims = pooled.dot(&bank.vectors().t());
    Array1::from_iter(
        sims.rows()
            .into_iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
    )
}

/// Span indices sorted best-first: score descending, then (start, end)
/// ascending so equal scores rank deterministically.
#[must_use]
pub fn rank_spans(spans: &[TokenSpan], scores: &ArrayView1<f64>) -> Vec<usize> {
    assert_eq!(spans.len(), scores.len());
    let mut order: Vec<usize> = (0..spans.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("span scores must not be NaN")
            .then_with(|| spans[a].cmp(&spans[b]))
    });
    order
}

/// The `min(k, S)` best span indices.
#[must_use]
pub fn select_top_k(spans: &[TokenSpan], scores: &ArrayView1<f64>, k: usize) -> Vec<usize> {
    let mut ranked = rank_spans(spans, scores);
    ranked.truncate(k.min(spans.len()));
    ranked
}

/// Training-time candidate set: the top-k spans plus every enumerable gold
/// span, gold injected after the ranked block in span order. Gold spans
/// longer than the enumeration cap cannot appear in `spans` and are
/// silently absent.
#[must_use]
pub fn select_training_candidates(
    spans: &[TokenSpan],
    scores: &ArrayView1<f64>,
    k: usize,
    gold: &BTreeSet<TokenSpan>,
) -> Vec<usize> {
    let top = select_top_k(spans, scores, k);
    let chosen: BTreeSet<usize> = top.iter().copied().collect();
    let mut out = top;
    for (idx, span) in spans.iter().enumerate() {
        if gold.contains(span) && !chosen.contains(&idx) {
            out.push(idx);
        }
    }
    out
}

/// Uniform downsample of the candidate spans for the mention loss, always
/// keeping every gold span. Returns indices in enumeration order.
pub fn downsample_spans(
    spans: &[TokenSpan],
    gold: &BTreeSet<TokenSpan>,
    target: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let gold_indices: Vec<usize> = spans
        .iter()
        .enumerate()
        .filter_map(|(i, s)| gold.contains(s).then_some(i))
        .collect();
    if gold_indices.len() > target {
        return Err(Error::Config(format!(
            "downsample target {target} is below the {} gold spans of a document",
            gold_indices.len()
        )));
    }
    if spans.len() <= target {
        return Ok((0..spans.len()).collect());
    }
    let negatives: Vec<usize> = (0..spans.len())
        .filter(|i| !gold_indices.binary_search(i).is_ok())
        .collect();
    let take = target - gold_indices.len();
    let picked = rand::seq::index::sample(rng, negatives.len(), take);
    let mut out = gold_indices;
    out.extend(picked.iter().map(|i| negatives[i]));
    out.sort_unstable();
    Ok(out)
}

/// Mention margin loss and its gradients with respect to the prototypes and
/// both embedding blocks.
#[derive(Debug)]
pub struct MentionLossGrads {
    pub loss: f64,
    pub d_prototypes: Array2<f64>,
    pub d_true: Array2<f64>,
    pub d_false: Array2<f64>,
}

/// Mean hinge over all (gold, non-gold) pairs:
/// `max(0, margin - <p_i, t_i> + <p_i, f_j>)` where `p_i` is the prototype
/// of gold span i's entity type. Zero (and no gradient) when either side is
/// empty. A hinge exactly at zero is inactive.
#[must_use]
pub fn mention_loss(
    true_embeddings: &ArrayView2<f64>,
    true_types: &[EntityType],
    false_embeddings: &ArrayView2<f64>,
    bank: &EntityPrototypeBank,
    margin: f64,
) -> f64 {
    mention_loss_impl(true_embeddings, true_types, false_embeddings, bank, margin, false).loss
}

pub fn mention_loss_with_grads(
    true_embeddings: &ArrayView2<f64>,
    true_types: &[EntityType],
    false_embeddings: &ArrayView2<f64>,
    bank: &EntityPrototypeBank,
    margin: f64,
) -> MentionLossGrads {
    mention_loss_impl(true_embeddings, true_types, false_embeddings, bank, margin, true)
}

fn mention_loss_impl(
    true_embeddings: &ArrayView2<f64>,
    true_types: &[EntityType],
    false_embeddings: &ArrayView2<f64>,
    bank: &EntityPrototypeBank,
    margin: f64,
    want_grads: bool,
) -> MentionLossGrads {
    assert_eq!(true_embeddings.nrows(), true_types.len());
    let d = bank.hidden_size();
    let n_true = true_embeddings.nrows();
    let n_false = false_embeddings.nrows();
    let mut out = MentionLossGrads {
        loss: 0.0,
        d_prototypes: Array2::zeros((EntityType::COUNT, d)),
        d_true: Array2::zeros((n_true, d)),
        d_false: Array2::zeros((n_false, d)),
    };
    if n_true == 0 || n_false == 0 {
        return out;
    }
    // Prototype row per gold span, so similarity blocks are two matmuls.
    let mut selected = Array2::zeros((n_true, d));
    for (i, t) in true_types.iter().enumerate() {
        selected.row_mut(i).assign(&bank.prototype(*t));
    }
    let sim_true: Array1<f64> = (&selected * true_embeddings).sum_axis(ndarray::Axis(1));
    let sim_false = selected.dot(&false_embeddings.t());

    let weight = 1.0 / (n_true as f64 * n_false as f64);
    for i in 0..n_true {
        for j in 0..n_false {
            let hinge = margin - sim_true[i] + sim_false[[i, j]];
            if hinge <= 0.0 {
                continue;
            }
            out.loss += weight * hinge;
            if !want_grads {
                continue;
            }
            let ti = true_types[i].index();
            for c in 0..d {
                out.d_prototypes[[ti, c]] +=
                    weight * (false_embeddings[[j, c]] - true_embeddings[[i, c]]);
                out.d_true[[i, c]] -= weight * selected[[i, c]];
                out.d_false[[j, c]] += weight * selected[[i, c]];
            }
        }
    }
    out
}

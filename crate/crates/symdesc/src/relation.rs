//! Pairwise relation classification with learned none-of-the-above (NOTA)
//! thresholds.
//!
//! Every ordered pair of surviving spans (head, tail), head != tail, is
//! represented by the concatenation of the two span vectors and scored
//! against two prototype banks: one vector per relation type, plus several
//! NOTA vectors. The best NOTA logit is the pair's adaptive threshold
//! `l_TH`; a relation is emitted only when its best relation logit strictly
//! beats `l_TH`, with confidence `best - l_TH`. Ties keep the pair silent.
//!
//! Training bends the logits around the threshold: positive labels are
//! pushed above `l_TH` by a softmax term over the positives plus the
//! threshold, and `l_TH` is pushed above every negative label by a mirror
//! term. The threshold gradient flows to the NOTA vector that currently
//! attains the maximum.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{RelationType, TokenSpan};

/// Relation-type vectors (4 rows) and NOTA vectors (`nota_count` rows),
/// all of pair dimension `2d`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationPrototypeBank {
    relation: Array2<f64>,
    nota: Array2<f64>,
}

impl RelationPrototypeBank {
    pub fn new_random(hidden_size: usize, nota_count: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if nota_count == 0 {
            return Err(Error::Config("at least one NOTA prototype is required".into()));
        }
        let pair_dim = hidden_size * 2;
        let normal = Normal::new(0.0, 1.0 / (pair_dim as f64).sqrt()).expect("finite std");
        Ok(RelationPrototypeBank {
            relation: Array2::from_shape_fn((RelationType::COUNT, pair_dim), |_| normal.sample(rng)),
            nota: Array2::from_shape_fn((nota_count, pair_dim), |_| normal.sample(rng)),
        })
    }

    pub fn from_vectors(relation: Array2<f64>, nota: Array2<f64>) -> Result<Self> {
        if relation.nrows() != RelationType::COUNT {
            return Err(Error::Validation(format!(
                "relation prototype bank needs {} rows, got {}",
                RelationType::COUNT,
                relation.nrows()
            )));
        }
        if nota.nrows() == 0 {
            return Err(Error::Validation("NOTA bank must not be empty".into()));
        }
        if nota.ncols() != relation.ncols() {
            return Err(Error::Validation(format!(
                "NOTA vectors have dim {}, relation vectors {}",
                nota.ncols(),
                relation.ncols()
            )));
        }
        Ok(RelationPrototypeBank { relation, nota })
    }

    #[must_use]
    pub fn pair_dim(&self) -> usize {
        self.relation.ncols()
    }

    #[must_use]
    pub fn nota_count(&self) -> usize {
        self.nota.nrows()
    }

    #[must_use]
    pub fn relation_vectors(&self) -> &Array2<f64> {
        &self.relation
    }

    #[must_use]
    pub fn nota_vectors(&self) -> &Array2<f64> {
        &self.nota
    }

    pub fn relation_vectors_mut(&mut self) -> &mut Array2<f64> {
        &mut self.relation
    }

    pub fn nota_vectors_mut(&mut self) -> &mut Array2<f64> {
        &mut self.nota
    }

    /// Both banks mutably at once (split borrow for optimizer loops).
    pub fn vectors_mut(&mut self) -> (&mut Array2<f64>, &mut Array2<f64>) {
        (&mut self.relation, &mut self.nota)
    }
}

/// All ordered pairs (i, j), i != j, over `count` items: exactly
/// `count * (count - 1)` of them, grouped by head index.
#[must_use]
pub fn ordered_pairs(count: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(count.saturating_mul(count.saturating_sub(1)));
    for i in 0..count {
        for j in 0..count {
            if i != j {
                out.push((i, j));
            }
        }
    }
    out
}

/// Pair representation: `[e_head ; e_tail]`, one row per pair.
#[must_use]
pub fn pair_representations(embeddings: &ArrayView2<f64>, pairs: &[(usize, usize)]) -> Array2<f64> {
    let d = embeddings.ncols();
    let mut reps = Array2::zeros((pairs.len(), 2 * d));
    for (p, &(i, j)) in pairs.iter().enumerate() {
        for c in 0..d {
            reps[[p, c]] = embeddings[[i, c]];
            reps[[p, d + c]] = embeddings[[j, c]];
        }
    }
    reps
}

/// Dot-product logits of every pair against both banks.
#[derive(Debug, Clone)]
pub struct PairLogits {
    /// `P x 4`, columns indexed by [`RelationType::index`].
    pub relation: Array2<f64>,
    /// `P x nota_count`.
    pub nota: Array2<f64>,
}

impl PairLogits {
    /// Adaptive threshold of pair `p`: its best NOTA logit, plus the index
    /// attaining it (first index on exact ties).
    #[must_use]
    pub fn threshold(&self, p: usize) -> (f64, usize) {
        let row = self.nota.row(p);
        let mut best = row[0];
        let mut arg = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                arg = i;
            }
        }
        (best, arg)
    }

    /// Logits restricted to a subset of pair rows, in the given order.
    #[must_use]
    pub fn select_rows(&self, rows: &[usize]) -> PairLogits {
        PairLogits {
            relation: self.relation.select(ndarray::Axis(0), rows),
            nota: self.nota.select(ndarray::Axis(0), rows),
        }
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.relation.nrows()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.relation.nrows() == 0
    }
}

/// Scores pair representations against the banks.
pub fn pair_logits(reps: &ArrayView2<f64>, bank: &RelationPrototypeBank) -> Result<PairLogits> {
    if reps.nrows() > 0 && reps.ncols() != bank.pair_dim() {
        return Err(Error::Validation(format!(
            "pair representations have dim {}, bank expects {}",
            reps.ncols(),
            bank.pair_dim()
        )));
    }
    Ok(PairLogits {
        relation: reps.dot(&bank.relation.t()),
        nota: reps.dot(&bank.nota.t()),
    })
}

/// An emitted relation between two token spans, with the margin by which
/// its logit beat the pair's threshold (always positive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationPrediction {
    #[serde(rename = "type")]
    pub relation_type: RelationType,
    pub head: TokenSpan,
    pub tail: TokenSpan,
    pub score: f64,
}

impl RelationPrediction {
    /// Canonical ordering key for deterministic tie-breaks.
    pub fn span_key(&self) -> (usize, usize, usize, usize) {
        (self.head.start, self.head.end, self.tail.start, self.tail.end)
    }
}

/// Emits at most one relation per pair: the best-logit relation type
/// (lowest type index on ties), only when it strictly beats the pair's
/// threshold. Ties with the threshold emit nothing.
#[must_use]
pub fn predict_relations(
    pairs: &[(usize, usize)],
    spans: &[TokenSpan],
    logits: &PairLogits,
) -> Vec<RelationPrediction> {
    assert_eq!(pairs.len(), logits.len());
    let mut out = Vec::new();
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let row = logits.relation.row(p);
        let (mut best, mut arg) = (row[0], 0usize);
        for (r, &v) in row.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                arg = r;
            }
        }
        let (l_th, _) = logits.threshold(p);
        if best > l_th {
            out.push(RelationPrediction {
                relation_type: RelationType::from_index(arg).expect("argmax over 4 columns"),
                head: spans[i],
                tail: spans[j],
                score: best - l_th,
            });
        }
    }
    out
}

/// The two terms of the adaptive-threshold loss for one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtlTerms {
    /// Pulls every gold relation logit above the threshold.
    pub positive: f64,
    /// Pushes the threshold above every non-gold relation logit.
    pub negative: f64,
}

impl AtlTerms {
    #[must_use]
    pub fn total(&self) -> f64 {
        self.positive + self.negative
    }
}

/// Gradients of one pair's loss with respect to its logits. The threshold
/// component is reported against the NOTA logit that attains the maximum.
#[derive(Debug, Clone)]
pub struct AtlGrads {
    pub terms: AtlTerms,
    pub d_relation: Array1<f64>,
    pub d_nota: Array1<f64>,
}

/// Adaptive-threshold loss of one pair.
///
/// With P the gold label set, N its complement, and `l_TH` the best NOTA
/// logit:
///
/// ```text
/// positive = -sum_{r in P} log( exp(l_r) / (sum_{r' in P} exp(l_r') + exp(l_TH)) )
/// negative = -log( exp(l_TH) / (sum_{r' in N} exp(l_r') + exp(l_TH)) )
/// ```
///
/// The positive term vanishes when P is empty; the negative term is 0 when
/// N is empty. Both are evaluated with log-sum-exp stabilization and are
/// finite for finite logits.
#[must_use]
pub fn adaptive_threshold_loss(
    relation_logits: &ArrayView1<f64>,
    nota_logits: &ArrayView1<f64>,
    gold: &[RelationType],
) -> AtlTerms {
    atl_impl(relation_logits, nota_logits, gold, false).terms
}

pub fn adaptive_threshold_loss_grads(
    relation_logits: &ArrayView1<f64>,
    nota_logits: &ArrayView1<f64>,
    gold: &[RelationType],
) -> AtlGrads {
    atl_impl(relation_logits, nota_logits, gold, true)
}

fn atl_impl(
    relation_logits: &ArrayView1<f64>,
    nota_logits: &ArrayView1<f64>,
    gold: &[RelationType],
    want_grads: bool,
) -> AtlGrads {
    assert_eq!(relation_logits.len(), RelationType::COUNT);
    assert!(!nota_logits.is_empty(), "NOTA bank must not be empty");

    let mut positive_mask = [false; RelationType::COUNT];
    for g in gold {
        positive_mask[g.index()] = true;
    }
    let positives: Vec<usize> = (0..RelationType::COUNT).filter(|&r| positive_mask[r]).collect();
    let negatives: Vec<usize> = (0..RelationType::COUNT).filter(|&r| !positive_mask[r]).collect();

    let (l_th, th_arg) = {
        let mut best = nota_logits[0];
        let mut arg = 0;
        for (i, &v) in nota_logits.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                arg = i;
            }
        }
        (best, arg)
    };

    let lse = |logits: &[f64]| -> f64 {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
    };

    let mut grads = AtlGrads {
        terms: AtlTerms {
            positive: 0.0,
            negative: 0.0,
        },
        d_relation: Array1::zeros(RelationType::COUNT),
        d_nota: Array1::zeros(nota_logits.len()),
    };
    let mut d_th = 0.0;

    if !positives.is_empty() {
        let mut pool: Vec<f64> = positives.iter().map(|&r| relation_logits[r]).collect();
        pool.push(l_th);
        let z1 = lse(&pool);
        let p_count = positives.len() as f64;
        grads.terms.positive = p_count * z1 - positives.iter().map(|&r| relation_logits[r]).sum::<f64>();
        if want_grads {
            for &r in &positives {
                grads.d_relation[r] = -1.0 + p_count * (relation_logits[r] - z1).exp();
            }
            d_th += p_count * (l_th - z1).exp();
        }
    }

    // The negative term is present for every pair; with no negative labels
    // it degenerates to -log(exp(l_TH)/exp(l_TH)) = 0.
    let mut pool: Vec<f64> = negatives.iter().map(|&r| relation_logits[r]).collect();
    pool.push(l_th);
    let z2 = lse(&pool);
    grads.terms.negative = z2 - l_th;
    if want_grads {
        for &r in &negatives {
            grads.d_relation[r] += (relation_logits[r] - z2).exp();
        }
        d_th += -1.0 + (l_th - z2).exp();
        grads.d_nota[th_arg] = d_th;
    }
    grads
}

/// Drops every prediction that is beaten by a same-type prediction
/// overlapping it in both arguments. "Beaten" means a strictly higher
/// score, or an equal score with a lexicographically smaller span key, so
/// the survivor set is unique and the operation is idempotent. Survivors
/// are returned sorted by score descending, then span key, then type.
#[must_use]
pub fn deduplicate_predictions(predictions: &[RelationPrediction]) -> Vec<RelationPrediction> {
    let mut out: Vec<RelationPrediction> = predictions
        .iter()
        .filter(|p| {
            !predictions.iter().any(|q| {
                q.relation_type == p.relation_type
                    && q.head.overlaps(&p.head)
                    && q.tail.overlaps(&p.tail)
                    && (q.score > p.score || (q.score == p.score && q.span_key() < p.span_key()))
            })
        })
        .cloned()
        .collect();
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("prediction scores must not be NaN")
            .then_with(|| a.span_key().cmp(&b.span_key()))
            .then_with(|| a.relation_type.index().cmp(&b.relation_type.index()))
    });
    out.dedup();
    out
}

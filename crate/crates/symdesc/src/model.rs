//! The joint extraction model: one encoder, one entity prototype bank, one
//! relation/NOTA prototype bank, and the forward/backward plumbing that
//! connects them.
//!
//! Inference: encode -> enumerate spans -> pool -> score -> keep top-k ->
//! classify all ordered candidate pairs -> emit relations beating their
//! NOTA threshold -> deduplicate -> derive entity types.
//!
//! Training shares the forward pass, injects gold spans into the candidate
//! set, and backpropagates the mention margin loss and the pair-level
//! adaptive-threshold loss through pooling into the encoder's attention
//! weights (hash embeddings and positions stay frozen; a lookup-table
//! encoder receives no gradient at all).

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{AttentionGrads, EncoderConfig, EncoderImpl, TokenEncoder, ToyEncoder};
use crate::error::{Error, Result};
use crate::ingest::{AlignedDocument, EntityType, RelationType, TokenSpan};
use crate::mention::{
    self, EntityPrototypeBank, MentionConfig, Pooling, PoolTrace,
};
use crate::relation::{
    self, PairLogits, RelationPrediction, RelationPrototypeBank,
};
use crate::typing::{self, TypingOutcome};

/// Everything about the model that is not a learned weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub max_span_len: usize,
    pub pooling: Pooling,
    pub nota_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            max_span_len: 16,
            pooling: Pooling::Mean,
            nota_count: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_span_len == 0 {
            return Err(Error::Config("max_span_len must be at least 1".into()));
        }
        if self.nota_count == 0 {
            return Err(Error::Config("nota_count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointModel {
    pub config: ModelConfig,
    pub encoder: EncoderImpl,
    pub entity_bank: EntityPrototypeBank,
    pub relation_bank: RelationPrototypeBank,
}

/// Per-document forward artifacts reused across k values: every span with
/// its pooled vector and score, plus the best-first ranking.
#[derive(Debug)]
pub struct ScoredDocument {
    pub spans: Vec<TokenSpan>,
    pub pooled: Array2<f64>,
    pub scores: Array1<f64>,
    pub ranking: Vec<usize>,
}

/// Candidate spans of one document (a ranking prefix) with the logits of
/// all their ordered pairs. Pair endpoints index `spans`, which is in rank
/// order, so restricting to a smaller k is a row filter.
#[derive(Debug)]
pub struct CandidateClassification {
    pub spans: Vec<TokenSpan>,
    pub pairs: Vec<(usize, usize)>,
    pub logits: PairLogits,
}

/// Gradient buffers matching [`JointModel::trainable_mut`].
#[derive(Debug)]
pub struct ModelGrads {
    pub entity: Array2<f64>,
    pub relation: Array2<f64>,
    pub nota: Array2<f64>,
    pub encoder: Option<AttentionGrads>,
}

impl ModelGrads {
    #[must_use]
    pub fn zeros_like(model: &JointModel) -> Self {
        let d = model.hidden_size();
        ModelGrads {
            entity: Array2::zeros((EntityType::COUNT, d)),
            relation: Array2::zeros((RelationType::COUNT, 2 * d)),
            nota: Array2::zeros((model.relation_bank.nota_count(), 2 * d)),
            encoder: model.encoder.as_toy().map(ToyEncoder::zero_grads),
        }
    }

    /// Gradient tensors in the fixed parameter order.
    #[must_use]
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = vec![&self.entity, &self.relation, &self.nota];
        if let Some(e) = &self.encoder {
            out.extend([&e.wq, &e.wk, &e.wv, &e.wo]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = vec![&mut self.entity, &mut self.relation, &mut self.nota];
        if let Some(e) = &mut self.encoder {
            out.extend([&mut e.wq, &mut e.wk, &mut e.wv, &mut e.wo]);
        }
        out
    }

    #[must_use]
    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Loss weights and sampling knobs for one training step.
#[derive(Debug, Clone, Copy)]
pub struct TrainStep {
    pub k_train: usize,
    pub downsample: usize,
    pub margin: f64,
    pub mention_weight: f64,
    pub relation_weight: f64,
}

/// Raw (unweighted) per-document training losses.
#[derive(Debug, Clone, Copy, Default)]
pub struct DocLosses {
    pub mention: f64,
    pub relation: f64,
    pub pair_count: usize,
}

impl JointModel {
    /// Fresh model with a toy encoder; all weights seeded from `seed`.
    pub fn new_toy(encoder_config: EncoderConfig, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let encoder = EncoderImpl::Toy(ToyEncoder::new(encoder_config, seed)?);
        Self::with_encoder(encoder, config, seed)
    }

    /// Fresh prototype banks around an existing encoder.
    pub fn with_encoder(encoder: EncoderImpl, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = encoder.config().hidden_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x70726f746f));
        let entity_bank = EntityPrototypeBank::new_random(d, &mut rng);
        let relation_bank = RelationPrototypeBank::new_random(d, config.nota_count, &mut rng)?;
        let model = JointModel {
            config,
            encoder,
            entity_bank,
            relation_bank,
        };
        model.validate()?;
        Ok(model)
    }

    /// Cross-component shape checks; run after deserializing a checkpoint.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.encoder.config().validate()?;
        let d = self.hidden_size();
        if self.entity_bank.hidden_size() != d {
            return Err(Error::Validation(format!(
                "entity bank dim {} does not match encoder dim {d}",
                self.entity_bank.hidden_size()
            )));
        }
        if self.relation_bank.pair_dim() != 2 * d {
            return Err(Error::Validation(format!(
                "relation bank dim {} does not match pair dim {}",
                self.relation_bank.pair_dim(),
                2 * d
            )));
        }
        if self.relation_bank.nota_count() != self.config.nota_count {
            return Err(Error::Validation(format!(
                "NOTA bank has {} rows, config says {}",
                self.relation_bank.nota_count(),
                self.config.nota_count
            )));
        }
        Ok(())
    }

    #[must_use]
    pub fn hidden_size(&self) -> usize {
        self.encoder.config().hidden_size
    }

    /// Trainable tensors in a fixed order: entity bank, relation bank,
    /// NOTA bank, then attention weights when the encoder is trainable.
    pub fn trainable_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let (relation, nota) = self.relation_bank.vectors_mut();
        let mut out: Vec<&mut Array2<f64>> = vec![self.entity_bank.vectors_mut(), relation, nota];
        if let Some(toy) = self.encoder.as_toy_mut() {
            out.extend(toy.weights_mut());
        }
        out
    }

    /// Encodes, enumerates, pools, and scores every span of a document.
    pub fn score_document(&self, tokens: &[String]) -> Result<ScoredDocument> {
        let embeddings = self.encoder.encode_document(tokens)?;
        Ok(self.score_embedded(tokens.len(), &embeddings).0)
    }

    fn score_embedded(&self, len: usize, embeddings: &Array2<f64>) -> (ScoredDocument, Vec<PoolTrace>) {
        let spans = mention::enumerate_spans(len, self.config.max_span_len);
        let (pooled, traces) = mention::pool_all_spans(&embeddings.view(), &spans, self.config.pooling);
        let scores = mention::score_spans(&pooled.view(), &self.entity_bank);
        let ranking = mention::rank_spans(&spans, &scores.view());
        (
            ScoredDocument {
                spans,
                pooled,
                scores,
                ranking,
            },
            traces,
        )
    }

    /// Classifies all ordered pairs over the top-k ranked spans.
    pub fn classify_top_k(&self, scored: &ScoredDocument, k: usize) -> Result<CandidateClassification> {
        let take = k.min(scored.spans.len());
        let indices = &scored.ranking[..take];
        let spans: Vec<TokenSpan> = indices.iter().map(|&i| scored.spans[i]).collect();
        let embeddings = scored.pooled.select(Axis(0), indices);
        let pairs = relation::ordered_pairs(take);
        let reps = relation::pair_representations(&embeddings.view(), &pairs);
        let logits = relation::pair_logits(&reps.view(), &self.relation_bank)?;
        Ok(CandidateClassification {
            spans,
            pairs,
            logits,
        })
    }

    /// End-to-end inference on a tokenized document.
    pub fn predict_tokens(
        &self,
        tokens: &[String],
        k: usize,
    ) -> Result<(Vec<RelationPrediction>, TypingOutcome)> {
        let scored = self.score_document(tokens)?;
        let classified = self.classify_top_k(&scored, k)?;
        let raw = relation::predict_relations(&classified.pairs, &classified.spans, &classified.logits);
        let relations = relation::deduplicate_predictions(&raw);
        let mentions = typing::assign_entity_types(&relations);
        Ok((relations, mentions))
    }

    /// One training forward/backward over a document. Gradients are scaled
    /// by `weight` (the caller's batch averaging) and accumulated into
    /// `grads`; the returned losses are unweighted.
    pub fn train_document(
        &self,
        doc: &AlignedDocument,
        step: &TrainStep,
        rng: &mut impl Rng,
        grads: &mut ModelGrads,
        weight: f64,
    ) -> Result<DocLosses> {
        let tokens = &doc.tokenized.tokens;
        if tokens.is_empty() {
            return Ok(DocLosses::default());
        }

        // Forward through the encoder, keeping a trace when trainable.
        let (embeddings, trace) = match &self.encoder {
            EncoderImpl::Toy(toy) => {
                let (e, t) = toy.forward_trace(tokens);
                (e, Some(t))
            }
            EncoderImpl::Table(table) => (table.encode_document(tokens)?, None),
        };
        let (scored, pool_traces) = self.score_embedded(tokens.len(), &embeddings);
        if scored.spans.is_empty() {
            return Ok(DocLosses::default());
        }
        let mut d_pooled = Array2::zeros(scored.pooled.raw_dim());

        // Gold spans, restricted to what the enumeration can represent.
        let span_index: BTreeMap<TokenSpan, usize> = scored
            .spans
            .iter()
            .enumerate()
            .map(|(i, s)| (*s, i))
            .collect();
        let mut gold_typed: BTreeSet<(TokenSpan, EntityType)> = BTreeSet::new();
        for e in &doc.entities {
            if span_index.contains_key(&e.token_span) {
                gold_typed.insert((e.token_span, e.entity_type));
            }
        }
        let gold_spans: BTreeSet<TokenSpan> = gold_typed.iter().map(|(s, _)| *s).collect();

        // Mention margin loss over a downsampled candidate set.
        let mention_cfg = MentionConfig {
            max_span_len: self.config.max_span_len,
            pooling: self.config.pooling,
            margin: step.margin,
            downsample: step.downsample,
        };
        mention_cfg.validate()?;
        let sample = mention::downsample_spans(&scored.spans, &gold_spans, step.downsample, rng)?;
        let true_rows: Vec<(usize, EntityType)> = gold_typed
            .iter()
            .map(|(span, t)| (span_index[span], *t))
            .collect();
        let false_rows: Vec<usize> = sample
            .iter()
            .copied()
            .filter(|&i| !gold_spans.contains(&scored.spans[i]))
            .collect();
        let mut mention_loss_value = 0.0;
        if !true_rows.is_empty() && !false_rows.is_empty() {
            let d = self.hidden_size();
            let mut true_emb = Array2::zeros((true_rows.len(), d));
            let mut true_types = Vec::with_capacity(true_rows.len());
            for (r, &(row, t)) in true_rows.iter().enumerate() {
                true_emb.row_mut(r).assign(&scored.pooled.row(row));
                true_types.push(t);
            }
            let false_emb = scored.pooled.select(Axis(0), &false_rows);
            let out = mention::mention_loss_with_grads(
                &true_emb.view(),
                &true_types,
                &false_emb.view(),
                &self.entity_bank,
                step.margin,
            );
            mention_loss_value = out.loss;
            let scale = step.mention_weight * weight;
            grads.entity.scaled_add(scale, &out.d_prototypes);
            for (r, &(row, _)) in true_rows.iter().enumerate() {
                d_pooled
                    .row_mut(row)
                    .scaled_add(scale, &out.d_true.row(r));
            }
            for (r, &row) in false_rows.iter().enumerate() {
                d_pooled
                    .row_mut(row)
                    .scaled_add(scale, &out.d_false.row(r));
            }
        }

        // Relation loss over ordered pairs of top-k plus injected gold.
        let candidates = mention::select_training_candidates(
            &scored.spans,
            &scored.scores.view(),
            step.k_train,
            &gold_spans,
        );
        let cand_spans: Vec<TokenSpan> = candidates.iter().map(|&i| scored.spans[i]).collect();
        let cand_emb = scored.pooled.select(Axis(0), &candidates);
        let pairs = relation::ordered_pairs(candidates.len());
        let mut relation_loss_value = 0.0;
        if !pairs.is_empty() {
            let reps = relation::pair_representations(&cand_emb.view(), &pairs);
            let logits = relation::pair_logits(&reps.view(), &self.relation_bank)?;

            let mut gold_labels: BTreeMap<(TokenSpan, TokenSpan), Vec<RelationType>> = BTreeMap::new();
            for (t, head, tail) in doc.gold_relation_spans() {
                gold_labels.entry((head, tail)).or_default().push(t);
            }

            let mut d_rel_logits = Array2::zeros((pairs.len(), RelationType::COUNT));
            let mut d_nota_logits = Array2::zeros((pairs.len(), self.relation_bank.nota_count()));
            for (p, &(a, b)) in pairs.iter().enumerate() {
                let gold = gold_labels
                    .get(&(cand_spans[a], cand_spans[b]))
                    .map_or(&[][..], Vec::as_slice);
                let out = relation::adaptive_threshold_loss_grads(
                    &logits.relation.row(p),
                    &logits.nota.row(p),
                    gold,
                );
                relation_loss_value += out.terms.total();
                d_rel_logits.row_mut(p).assign(&out.d_relation);
                d_nota_logits.row_mut(p).assign(&out.d_nota);
            }
            relation_loss_value /= pairs.len() as f64;

            let scale = step.relation_weight * weight / pairs.len() as f64;
            grads
                .relation
                .scaled_add(scale, &d_rel_logits.t().dot(&reps));
            grads.nota.scaled_add(scale, &d_nota_logits.t().dot(&reps));
            let d_reps = (d_rel_logits.dot(self.relation_bank.relation_vectors())
                + d_nota_logits.dot(self.relation_bank.nota_vectors()))
                * scale;
            let d = self.hidden_size();
            for (p, &(a, b)) in pairs.iter().enumerate() {
                let (row_a, row_b) = (candidates[a], candidates[b]);
                for c in 0..d {
                    d_pooled[[row_a, c]] += d_reps[[p, c]];
                    d_pooled[[row_b, c]] += d_reps[[p, d + c]];
                }
            }
        }

        // Pooling backward onto token rows, then into the encoder.
        if let Some(trace) = trace {
            let mut d_embeddings = Array2::zeros(embeddings.raw_dim());
            for (s, pool_trace) in pool_traces.iter().enumerate() {
                let row = d_pooled.row(s);
                if row.iter().any(|&g| g != 0.0) {
                    mention::pool_backward(pool_trace, &row, &mut d_embeddings);
                }
            }
            let enc_grads = grads
                .encoder
                .as_mut()
                .expect("toy encoder implies encoder grads");
            self.encoder
                .as_toy()
                .expect("trace implies toy encoder")
                .backward_trace(&trace, &d_embeddings, enc_grads);
        }

        Ok(DocLosses {
            mention: mention_loss_value,
            relation: relation_loss_value,
            pair_count: pairs.len(),
        })
    }
}

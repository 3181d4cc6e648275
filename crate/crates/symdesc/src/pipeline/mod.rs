//! Orchestration: training configuration, the training loop with early
//! stopping, checkpoint files, batch prediction, scoring predictions
//! against gold, and multi-seed aggregation.

pub mod optim;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{EmbeddingTableEncoder, EncoderConfig, EncoderImpl};
use crate::error::{Error, Result};
use crate::eval::{self, MatchMode, NerDocument, NerReport, ReDocument, ReReport};
use crate::ingest::{AlignedDocument, CharSpan, Preprocess, TokenSpan};
use crate::mention::Pooling;
use crate::model::{JointModel, ModelConfig, ModelGrads, TrainStep};
use crate::relation::RelationPrediction;
use crate::typing::TypedMention;
use optim::{AdamW, LinearSchedule};

/// Everything a training run needs. Unset fields take defaults, unknown
/// fields are rejected. When `embedding_table` is given the table file's
/// own dimensions and windowing replace `hidden_size`, `window`, and
/// `stride`, and the encoder stays frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub warmup_epochs: f64,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub weight_decay: f64,
    pub downsample: usize,
    pub k_train: usize,
    pub k_dev: usize,
    pub k_test: usize,
    pub max_span_len: usize,
    pub pooling: Pooling,
    pub preprocess: Preprocess,
    pub margin: f64,
    pub nota_count: usize,
    pub mention_loss_weight: f64,
    pub relation_loss_weight: f64,
    pub patience: usize,
    pub hidden_size: usize,
    pub window: usize,
    pub stride: usize,
    pub embedding_table: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            learning_rate: 5e-5,
            epochs: 60,
            warmup_epochs: 1.0,
            batch_size: 4,
            grad_clip: 1.0,
            weight_decay: 0.01,
            downsample: 1000,
            k_train: 50,
            k_dev: 50,
            k_test: 400,
            max_span_len: 16,
            pooling: Pooling::Mean,
            preprocess: Preprocess::LatexToText,
            margin: 1.0,
            nota_count: 4,
            mention_loss_weight: 1.0,
            relation_loss_weight: 1.0,
            patience: 10,
            hidden_size: 32,
            window: 512,
            stride: 256,
            embedding_table: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and positive, got {v}")))
            }
        };
        positive("learning_rate", self.learning_rate)?;
        positive("grad_clip", self.grad_clip)?;
        if !(self.warmup_epochs.is_finite() && self.warmup_epochs >= 0.0) {
            return Err(Error::Config(format!(
                "warmup_epochs must be finite and non-negative, got {}",
                self.warmup_epochs
            )));
        }
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::Config(format!(
                "margin must be finite and non-negative, got {}",
                self.margin
            )));
        }
        for (name, v) in [
            ("mention_loss_weight", self.mention_loss_weight),
            ("relation_loss_weight", self.relation_loss_weight),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("k_train", self.k_train),
            ("k_dev", self.k_dev),
            ("k_test", self.k_test),
            ("patience", self.patience),
            ("downsample", self.downsample),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        self.encoder_config().validate()?;
        self.model_config().validate()?;
        Ok(())
    }

    #[must_use]
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            hidden_size: self.hidden_size,
            window: self.window,
            stride: self.stride,
        }
    }

    #[must_use]
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            max_span_len: self.max_span_len,
            pooling: self.pooling,
            nota_count: self.nota_count,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let data = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        let config: TrainConfig = serde_json::from_str(&data).map_err(|e| Error::Format {
            path: display,
            line: 0,
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    fn build_model(&self) -> Result<JointModel> {
        match &self.embedding_table {
            Some(path) => {
                let table = EmbeddingTableEncoder::from_json_file(path)?;
                JointModel::with_encoder(EncoderImpl::Table(table), self.model_config(), self.seed)
            }
            None => JointModel::new_toy(self.encoder_config(), self.model_config(), self.seed),
        }
    }
}

/// One epoch of the run log. Losses are unweighted per-document means;
/// `total_loss` applies the configured weights. `grad_norm` is the mean
/// pre-clip global norm over the epoch's steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mention_loss: f64,
    pub relation_loss: f64,
    pub total_loss: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
    pub dev_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
    pub stopped_early: bool,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: RunLog,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with the configuration that produced it. JSON
/// round-trips are bitwise exact, so a reloaded checkpoint predicts
/// identically to the in-memory model it was saved from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub model: JointModel,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let data = serde_json::to_string(self)?;
        std::fs::write(path, data).map_err(|e| Error::io(&display, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let data = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&data).map_err(|e| Error::Format {
            path: display.clone(),
            line: 0,
            message: e.to_string(),
        })?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                path: display,
                line: 0,
                message: format!(
                    "checkpoint format {} is not supported (expected {CHECKPOINT_VERSION})",
                    ckpt.format_version
                ),
            });
        }
        ckpt.model.validate()?;
        Ok(ckpt)
    }
}

/// Strict micro relation F1 of the model on a document set.
pub fn dev_strict_f1(model: &JointModel, docs: &[AlignedDocument], k: usize) -> Result<f64> {
    let mut re_docs = Vec::with_capacity(docs.len());
    for doc in docs {
        let (preds, _) = model.predict_tokens(&doc.tokenized.tokens, k)?;
        re_docs.push(ReDocument::from_aligned(doc, preds));
    }
    Ok(eval::re_evaluate(&re_docs, MatchMode::Strict)?.overall.micro.f1)
}

/// Trains a model, evaluating on dev after every epoch and keeping the
/// weights of the best epoch (strict micro relation F1; later epochs must
/// be strictly better to replace the snapshot). Stops once `patience`
/// epochs pass without improvement. Identical inputs give bitwise
/// identical outcomes.
pub fn train(
    config: &TrainConfig,
    train_docs: &[AlignedDocument],
    dev_docs: &[AlignedDocument],
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_docs.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let mut model = config.build_model()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let steps_per_epoch = train_docs.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let warmup_steps = (config.warmup_epochs * steps_per_epoch as f64).round() as usize;
    let schedule = LinearSchedule::new(config.learning_rate, warmup_steps, total_steps)?;
    let mut opt = {
        let shapes = ModelGrads::zeros_like(&model);
        AdamW::new(&shapes.tensors(), config.weight_decay)?
    };
    let step_cfg = TrainStep {
        k_train: config.k_train,
        downsample: config.downsample,
        margin: config.margin,
        mention_weight: config.mention_loss_weight,
        relation_weight: config.relation_loss_weight,
    };

    let mut global_step = 0usize;
    let mut best: Option<(f64, usize, JointModel)> = None;
    let mut since_best = 0usize;
    let mut epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_docs.len()).collect();
        order.shuffle(&mut rng);
        let mut mention_sum = 0.0;
        let mut relation_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut last_lr = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut grads = ModelGrads::zeros_like(&model);
            let weight = 1.0 / chunk.len() as f64;
            for &di in chunk {
                let losses =
                    model.train_document(&train_docs[di], &step_cfg, &mut rng, &mut grads, weight)?;
                if !(losses.mention.is_finite() && losses.relation.is_finite()) {
                    return Err(Error::Divergence(format!(
                        "non-finite loss on document {} at epoch {epoch}",
                        train_docs[di].raw.id
                    )));
                }
                mention_sum += losses.mention;
                relation_sum += losses.relation;
            }
            if !grads.all_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite gradient at epoch {epoch}, step {global_step}"
                )));
            }
            norm_sum += optim::clip_global_norm(&mut grads.tensors_mut(), config.grad_clip);
            let lr = schedule.rate(global_step);
            global_step += 1;
            last_lr = lr;
            let grad_refs = grads.tensors();
            opt.step(&mut model.trainable_mut(), &grad_refs, lr);
        }

        let dev_f1 = dev_strict_f1(&model, dev_docs, config.k_dev)?;
        let n = train_docs.len() as f64;
        let mention_loss = mention_sum / n;
        let relation_loss = relation_sum / n;
        epochs.push(EpochLog {
            epoch,
            mention_loss,
            relation_loss,
            total_loss: config.mention_loss_weight * mention_loss
                + config.relation_loss_weight * relation_loss,
            grad_norm: norm_sum / steps_per_epoch as f64,
            learning_rate: last_lr,
            dev_f1,
        });

        if best.as_ref().is_none_or(|(f, _, _)| dev_f1 > *f) {
            best = Some((dev_f1, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_dev_f1, best_epoch, best_model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: config.clone(),
            model: best_model,
            best_epoch,
            best_dev_f1,
        },
        log: RunLog {
            seed: config.seed,
            epochs,
            best_epoch,
            best_dev_f1,
            stopped_early,
        },
    })
}

// ---------------------------------------------------------------------------
// Prediction files
// ---------------------------------------------------------------------------

/// A predicted mention with both token and original-text coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedMention {
    #[serde(rename = "type")]
    pub entity_type: crate::ingest::EntityType,
    pub token: TokenSpan,
    pub chars: CharSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedRelation {
    #[serde(rename = "type")]
    pub relation_type: crate::ingest::RelationType,
    pub score: f64,
    pub head: TokenSpan,
    pub tail: TokenSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedDocument {
    pub id: String,
    /// Spans whose relations disagreed about the entity type.
    pub type_conflicts: usize,
    pub mentions: Vec<PredictedMention>,
    pub relations: Vec<PredictedRelation>,
}

/// Model output over a corpus, with the settings needed to reproduce and
/// score it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub k: usize,
    pub preprocess: Preprocess,
    pub documents: Vec<PredictedDocument>,
}

impl PredictionFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let data = serde_json::to_string_pretty(self)?;
        std::fs::write(path, data).map_err(|e| Error::io(&display, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let display = path.display().to_string();
        let data = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        serde_json::from_str(&data).map_err(|e| Error::Format {
            path: display,
            line: 0,
            message: e.to_string(),
        })
    }
}

fn predict_document(
    model: &JointModel,
    id: &str,
    tokenized: &crate::ingest::TokenizedDocument,
    k: usize,
) -> Result<PredictedDocument> {
    let (relations, typing) = model.predict_tokens(&tokenized.tokens, k)?;
    Ok(PredictedDocument {
        id: id.to_string(),
        type_conflicts: typing.conflicts,
        mentions: typing
            .mentions
            .into_iter()
            .map(|m| PredictedMention {
                entity_type: m.entity_type,
                token: m.span,
                chars: tokenized.token_span_to_original(&m.span),
            })
            .collect(),
        relations: relations
            .into_iter()
            .map(|r| PredictedRelation {
                relation_type: r.relation_type,
                score: r.score,
                head: r.head,
                tail: r.tail,
            })
            .collect(),
    })
}

/// Runs the model over an aligned corpus.
pub fn predict_corpus(
    model: &JointModel,
    docs: &[AlignedDocument],
    k: usize,
    preprocess: Preprocess,
) -> Result<PredictionFile> {
    let mut documents = Vec::with_capacity(docs.len());
    for doc in docs {
        documents.push(predict_document(model, &doc.raw.id, &doc.tokenized, k)?);
    }
    Ok(PredictionFile {
        k,
        preprocess,
        documents,
    })
}

/// Runs the model over one raw text.
pub fn predict_text(
    model: &JointModel,
    id: &str,
    text: &str,
    k: usize,
    preprocess: Preprocess,
) -> Result<PredictedDocument> {
    let (tokenized, _warnings) = crate::ingest::tokenize_document(text, preprocess);
    predict_document(model, id, &tokenized, k)
}

// ---------------------------------------------------------------------------
// Scoring predictions against gold
// ---------------------------------------------------------------------------

/// Mention and relation scores of one prediction file against one gold
/// corpus. Mention scoring compares against the gold mentions that
/// participate in at least one relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub iou_threshold: f64,
    pub ner: NerReport,
    pub re_strict: ReReport,
    pub re_iou: ReReport,
}

pub fn evaluate_predictions(
    predictions: &PredictionFile,
    gold_docs: &[AlignedDocument],
    iou_threshold: f64,
) -> Result<EvaluationReport> {
    MatchMode::Iou(iou_threshold).validate()?;
    let mut by_id: BTreeMap<&str, &PredictedDocument> = BTreeMap::new();
    for doc in &predictions.documents {
        if by_id.insert(doc.id.as_str(), doc).is_some() {
            return Err(Error::Validation(format!(
                "prediction file lists document {:?} twice",
                doc.id
            )));
        }
    }
    let gold_ids: BTreeMap<&str, &AlignedDocument> =
        gold_docs.iter().map(|d| (d.raw.id.as_str(), d)).collect();
    for id in by_id.keys() {
        if !gold_ids.contains_key(id) {
            return Err(Error::Validation(format!(
                "prediction for document {id:?} has no gold counterpart"
            )));
        }
    }

    let mut ner_docs = Vec::with_capacity(gold_docs.len());
    let mut re_docs = Vec::with_capacity(gold_docs.len());
    for doc in gold_docs {
        let (mentions, relations) = match by_id.get(doc.raw.id.as_str()) {
            Some(pred) => (
                pred.mentions
                    .iter()
                    .map(|m| TypedMention {
                        span: m.token,
                        entity_type: m.entity_type,
                    })
                    .collect(),
                pred.relations
                    .iter()
                    .map(|r| RelationPrediction {
                        relation_type: r.relation_type,
                        head: r.head,
                        tail: r.tail,
                        score: r.score,
                    })
                    .collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        ner_docs.push(NerDocument {
            predicted: mentions,
            gold: doc
                .gold_relation_mentions()
                .into_iter()
                .map(|(span, entity_type)| TypedMention { span, entity_type })
                .collect(),
        });
        re_docs.push(ReDocument::from_aligned(doc, relations));
    }

    Ok(EvaluationReport {
        iou_threshold,
        ner: eval::ner_evaluate(&ner_docs),
        re_strict: eval::re_evaluate(&re_docs, MatchMode::Strict)?,
        re_iou: eval::re_evaluate(&re_docs, MatchMode::Iou(iou_threshold))?,
    })
}

// ---------------------------------------------------------------------------
// Multi-seed aggregation
// ---------------------------------------------------------------------------

/// Median and population standard deviation of one metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub median: f64,
    pub std: f64,
    pub runs: usize,
}

pub fn aggregate_metrics(values: &[f64]) -> Result<MetricSummary> {
    if values.is_empty() {
        return Err(Error::UndefinedRate(
            "cannot aggregate zero runs".into(),
        ));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("metric values must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    };
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let variance = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    Ok(MetricSummary {
        median,
        std: variance.sqrt(),
        runs: n,
    })
}

/// The headline metrics of a report, keyed for aggregation.
#[must_use]
pub fn summary_metrics(report: &EvaluationReport) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    out.insert("ner_strict_f1".into(), report.ner.strict.scores.f1);
    out.insert("ner_exact_f1".into(), report.ner.exact.scores.f1);
    out.insert("ner_partial_f1".into(), report.ner.partial.scores.f1);
    out.insert("ner_type_f1".into(), report.ner.type_match.scores.f1);
    out.insert("re_strict_micro_f1".into(), report.re_strict.overall.micro.f1);
    out.insert("re_strict_macro_f1".into(), report.re_strict.overall.macro_f1);
    out.insert("re_iou_micro_f1".into(), report.re_iou.overall.micro.f1);
    out.insert("re_iou_macro_f1".into(), report.re_iou.overall.macro_f1);
    out
}

/// Aggregates the headline metrics over per-seed reports.
pub fn aggregate_reports(
    reports: &[EvaluationReport],
) -> Result<BTreeMap<String, MetricSummary>> {
    if reports.is_empty() {
        return Err(Error::UndefinedRate("cannot aggregate zero reports".into()));
    }
    let mut collected: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for report in reports {
        for (k, v) in summary_metrics(report) {
            collected.entry(k).or_default().push(v);
        }
    }
    collected
        .into_iter()
        .map(|(k, vs)| Ok((k, aggregate_metrics(&vs)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest;

    fn write_corpus(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
        let path = dir.join(name);
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        path
    }

    fn toy_docs(dir: &Path) -> Vec<AlignedDocument> {
        let lines = [
            concat!(
                r#"{"id":"a","domain":"cs","text":"the node count is n here","entities":"#,
                r#"[{"id":"T1","type":"PRIMARY","start":4,"end":14},{"id":"T2","type":"SYMBOL","start":18,"end":19}],"#,
                r#""relations":[{"type":"Direct","head":"T1","tail":"T2"}]}"#
            ),
            concat!(
                r#"{"id":"b","domain":"math","text":"we write p for a prime","entities":"#,
                r#"[{"id":"T1","type":"SYMBOL","start":9,"end":10},{"id":"T2","type":"PRIMARY","start":17,"end":22}],"#,
                r#""relations":[{"type":"Direct","head":"T2","tail":"T1"}]}"#
            ),
            concat!(
                r#"{"id":"c","domain":"physics","text":"a mass m and a mass M collide","entities":"#,
                r#"[{"id":"T1","type":"SYMBOL","start":7,"end":8},{"id":"T2","type":"SYMBOL","start":20,"end":21}],"#,
                r#""relations":[{"type":"Corefer-Symbol","head":"T1","tail":"T2"}]}"#
            ),
        ];
        let path = write_corpus(dir, "train.jsonl", &lines);
        let raw = ingest::load_corpus(&path).unwrap();
        ingest::align_corpus(raw, Preprocess::None).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            seed: 3,
            learning_rate: 1e-2,
            epochs: 2,
            warmup_epochs: 0.5,
            batch_size: 2,
            downsample: 40,
            k_train: 6,
            k_dev: 6,
            k_test: 8,
            max_span_len: 3,
            nota_count: 2,
            hidden_size: 8,
            window: 32,
            stride: 16,
            preprocess: Preprocess::None,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_defaults_fill_missing_fields() {
        let parsed: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(parsed, TrainConfig::default());
        let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(parsed.epochs, 3);
        assert_eq!(parsed.batch_size, 4);
    }

    #[test]
    fn config_rejects_unknown_fields_and_bad_values() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"learning_rat": 0.1}"#).is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            stride: 600,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn aggregate_median_and_population_std() {
        let s = aggregate_metrics(&[1.0, 2.0, 10.0]).unwrap();
        assert_eq!(s.median, 2.0);
        assert!((s.std - (438.0f64 / 27.0).sqrt()).abs() < 1e-12);
        assert_eq!(s.runs, 3);

        let s = aggregate_metrics(&[3.0, 1.0, 10.0, 2.0]).unwrap();
        assert_eq!(s.median, 2.5);

        let s = aggregate_metrics(&[7.0]).unwrap();
        assert_eq!(s.median, 7.0);
        assert_eq!(s.std, 0.0);
    }

    #[test]
    fn aggregate_rejects_empty_and_non_finite() {
        assert!(aggregate_metrics(&[]).is_err());
        assert!(aggregate_metrics(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn training_runs_and_is_bitwise_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let docs = toy_docs(dir.path());
        let config = tiny_config();
        let a = train(&config, &docs, &docs).unwrap();
        let b = train(&config, &docs, &docs).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(
            serde_json::to_string(&a.checkpoint.model).unwrap(),
            serde_json::to_string(&b.checkpoint.model).unwrap()
        );
        assert_eq!(a.log.epochs.len(), 2);
        for e in &a.log.epochs {
            assert!(e.mention_loss.is_finite());
            assert!(e.relation_loss.is_finite());
            assert!(e.grad_norm >= 0.0);
        }
        // Warmup: the very first step uses a zero learning rate, so the
        // first epoch's last rate is on the ramp or past the peak; by the
        // end of training the rate has decayed below the peak.
        assert!(a.log.epochs[1].learning_rate <= config.learning_rate);
    }

    #[test]
    fn early_stopping_respects_patience() {
        let dir = tempfile::tempdir().unwrap();
        let docs = toy_docs(dir.path());
        // Dev gold has no relations, so dev F1 is 0 every epoch: the first
        // epoch sets the best snapshot and nothing ever improves on it.
        let dev_line =
            [r#"{"id":"d","domain":"cs","text":"nothing to see here","entities":[],"relations":[]}"#];
        let dev_path = write_corpus(dir.path(), "dev.jsonl", &dev_line);
        let dev = ingest::align_corpus(ingest::load_corpus(&dev_path).unwrap(), Preprocess::None)
            .unwrap();
        let config = TrainConfig {
            epochs: 50,
            patience: 2,
            ..tiny_config()
        };
        let out = train(&config, &docs, &dev).unwrap();
        assert!(out.log.stopped_early);
        assert_eq!(out.log.best_epoch, 0);
        assert_eq!(out.log.epochs.len(), 3, "epoch 0 best, then patience 2");
        assert_eq!(out.checkpoint.best_dev_f1, 0.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise_stable() {
        let dir = tempfile::tempdir().unwrap();
        let docs = toy_docs(dir.path());
        let out = train(&tiny_config(), &docs, &docs).unwrap();
        let path = dir.path().join("model.ckpt.json");
        out.checkpoint.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(
            serde_json::to_string(&loaded.model).unwrap(),
            serde_json::to_string(&out.checkpoint.model).unwrap()
        );
        let tokens = &docs[0].tokenized.tokens;
        assert_eq!(
            out.checkpoint.model.predict_tokens(tokens, 6).unwrap(),
            loaded.model.predict_tokens(tokens, 6).unwrap()
        );
    }

    #[test]
    fn checkpoint_version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let docs = toy_docs(dir.path());
        let out = train(&tiny_config(), &docs, &docs).unwrap();
        let path = dir.path().join("model.ckpt.json");
        let mut value = serde_json::to_value(&out.checkpoint).unwrap();
        value["format_version"] = serde_json::json!(99);
        std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert_eq!(err.kind(), "format");
    }

    #[test]
    fn prediction_file_coordinates_point_into_original_text() {
        let dir = tempfile::tempdir().unwrap();
        let docs = toy_docs(dir.path());
        let model = tiny_config().build_model().unwrap();
        let file = predict_corpus(&model, &docs, 6, Preprocess::None).unwrap();
        assert_eq!(file.documents.len(), docs.len());
        for (pred, doc) in file.documents.iter().zip(&docs) {
            assert_eq!(pred.id, doc.raw.id);
            let text: Vec<char> = doc.raw.text.chars().collect();
            for m in &pred.mentions {
                assert!(m.chars.end <= text.len());
                assert!(m.chars.start < m.chars.end);
                // The char span must cover the tokens' own text.
                let token_text: String = text[m.chars.start..m.chars.end].iter().collect();
                let first_token = &doc.tokenized.tokens[m.token.start];
                assert!(
                    token_text.contains(first_token.as_str()),
                    "{token_text:?} should contain {first_token:?}"
                );
            }
            for r in &pred.relations {
                assert!(r.score > 0.0);
            }
        }
        let path = dir.path().join("preds.json");
        file.save(&path).unwrap();
        assert_eq!(PredictionFile::load(&path).unwrap(), file);
    }

    #[test]
    fn evaluation_matches_direct_scoring_and_flags_unknown_ids() {
        let dir = tempfile::tempdir().unwrap();
        let docs = toy_docs(dir.path());
        let model = tiny_config().build_model().unwrap();
        let mut file = predict_corpus(&model, &docs, 6, Preprocess::None).unwrap();
        let report = evaluate_predictions(&file, &docs, 0.67).unwrap();

        let re_docs: Vec<ReDocument> = docs
            .iter()
            .map(|doc| {
                let (preds, _) = model.predict_tokens(&doc.tokenized.tokens, 6).unwrap();
                ReDocument::from_aligned(doc, preds)
            })
            .collect();
        let direct = eval::re_evaluate(&re_docs, MatchMode::Strict).unwrap();
        assert_eq!(report.re_strict, direct);

        // A prediction for an id missing from gold is an error.
        file.documents[0].id = "ghost".into();
        let err = evaluate_predictions(&file, &docs, 0.67).unwrap_err();
        assert_eq!(err.kind(), "validation");
    }

    #[test]
    fn gold_only_documents_count_as_missed() {
        let dir = tempfile::tempdir().unwrap();
        let docs = toy_docs(dir.path());
        let file = PredictionFile {
            k: 5,
            preprocess: Preprocess::None,
            documents: Vec::new(),
        };
        let report = evaluate_predictions(&file, &docs, 0.67).unwrap();
        assert_eq!(report.re_strict.overall.micro.recall, 0.0);
        assert_eq!(report.ner.strict.counts.mis, 6, "all gold mentions missed");
    }

    #[test]
    fn report_aggregation_summarizes_each_metric() {
        let dir = tempfile::tempdir().unwrap();
        let docs = toy_docs(dir.path());
        let model = tiny_config().build_model().unwrap();
        let file = predict_corpus(&model, &docs, 6, Preprocess::None).unwrap();
        let report = evaluate_predictions(&file, &docs, 0.67).unwrap();
        let summary = aggregate_reports(&[report.clone(), report]).unwrap();
        assert_eq!(summary.len(), 8);
        for s in summary.values() {
            assert_eq!(s.runs, 2);
            assert_eq!(s.std, 0.0, "identical runs have zero spread");
        }
    }

    #[test]
    fn text_prediction_uses_the_requested_preprocess() {
        let model = tiny_config().build_model().unwrap();
        let text = "the mass \\textbf{m} here";
        let with = predict_text(&model, "t", text, 5, Preprocess::LatexToText).unwrap();
        assert_eq!(with.id, "t");
        // Tokenization differs between preprocess modes, so coordinates may
        // differ; this at least must not error and must stay in bounds.
        for m in &with.mentions {
            assert!(m.chars.end <= text.chars().count());
        }
    }
}

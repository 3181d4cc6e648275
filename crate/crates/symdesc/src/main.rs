//! Command-line entry point: train, predict, evaluate, sweep, aggregate,
//! generate synthetic corpora, and report corpus statistics.
//!
//! Every failure prints a single JSON object `{"error": kind, "message"}`
//! to stderr and exits nonzero.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use symdesc::error::{Error, Result};
use symdesc::eval::{self, MatchMode};
use symdesc::ingest::{self, AlignedDocument, Preprocess};
use symdesc::pipeline::{
    self, Checkpoint, EvaluationReport, PredictionFile, TrainConfig,
};
use symdesc::synth;

#[derive(Parser)]
#[command(
    name = "symdesc",
    version,
    about = "Joint extraction of mathematical symbols and their descriptions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a JSONL corpus and save a checkpoint.
    Train(TrainArgs),
    /// Run a checkpoint over a corpus (.json/.jsonl) or a plain text file.
    Predict(PredictArgs),
    /// Score a prediction file against a gold corpus.
    Evaluate(EvaluateArgs),
    /// Measure scores across candidate budgets; writes CSV.
    Sweep(SweepArgs),
    /// Summarize evaluation reports from multiple runs (median, std).
    Aggregate(AggregateArgs),
    /// Generate a synthetic annotated corpus.
    Synth(SynthArgs),
    /// Report alignment warnings and boundary mismatch rates for a corpus.
    Stats(StatsArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Run log output path (default: checkpoint path with .log.json).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// A JSONL corpus (by .json/.jsonl extension) or a plain text file.
    #[arg(long)]
    input: PathBuf,
    /// Candidate budget; defaults to the checkpoint's test-time setting.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Endpoint IOU threshold for the overlap-tolerant scores.
    #[arg(long, default_value_t = 0.67)]
    iou: f64,
    /// Report output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long, default_value_t = 50)]
    k_min: usize,
    #[arg(long, default_value_t = 400)]
    k_max: usize,
    #[arg(long, default_value_t = 50)]
    k_step: usize,
    /// Endpoint IOU threshold for the relation scores.
    #[arg(long, default_value_t = 0.67)]
    iou: f64,
    /// CSV output path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AggregateArgs {
    /// Evaluation report files, one per run.
    #[arg(long, num_args = 1.., required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    documents: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    distractors: usize,
    /// Entity spans to corrupt so alignment flags them.
    #[arg(long, default_value_t = 0)]
    mismatches: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Preprocessing to apply before alignment: "latex" or "none".
    #[arg(long, default_value = "latex")]
    preprocess: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let payload = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
            });
            eprintln!("{payload}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(args) => run_train(args),
        Command::Predict(args) => run_predict(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Aggregate(args) => run_aggregate(args),
        Command::Synth(args) => run_synth(args),
        Command::Stats(args) => run_stats(args),
    }
}

fn load_aligned(path: &Path, preprocess: Preprocess) -> Result<Vec<AlignedDocument>> {
    let raw = ingest::load_corpus(path)?;
    ingest::align_corpus(raw, preprocess)
}

fn write_or_print(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| Error::Io {
                path: path.display().to_string(),
                source: e,
            }),
        None => {
            println!("{content}");
            Ok(())
        }
    }
}

fn parse_preprocess(s: &str) -> Result<Preprocess> {
    match s {
        "none" => Ok(Preprocess::None),
        "latex" | "latex_to_text" => Ok(Preprocess::LatexToText),
        other => Err(Error::Config(format!(
            "unknown preprocess {other:?}; expected \"latex\" or \"none\""
        ))),
    }
}

fn run_train(args: TrainArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => TrainConfig::from_json_file(path)?,
        None => TrainConfig::default(),
    };
    let train_docs = load_aligned(&args.train, config.preprocess)?;
    let dev_docs = load_aligned(&args.dev, config.preprocess)?;
    let outcome = pipeline::train(&config, &train_docs, &dev_docs)?;
    outcome.checkpoint.save(&args.out)?;
    let log_path = args
        .log
        .unwrap_or_else(|| args.out.with_extension("log.json"));
    let log_json = serde_json::to_string_pretty(&outcome.log)?;
    std::fs::write(&log_path, log_json).map_err(|e| Error::Io {
        path: log_path.display().to_string(),
        source: e,
    })?;
    println!(
        "{}",
        serde_json::json!({
            "best_epoch": outcome.log.best_epoch,
            "best_dev_f1": outcome.log.best_dev_f1,
            "epochs_ran": outcome.log.epochs.len(),
            "stopped_early": outcome.log.stopped_early,
            "checkpoint": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn run_predict(args: PredictArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let k = args.k.unwrap_or(ckpt.config.k_test);
    let preprocess = ckpt.config.preprocess;
    let is_corpus = args
        .input
        .extension()
        .is_some_and(|e| e == "json" || e == "jsonl");
    let file = if is_corpus {
        let docs = load_aligned(&args.input, preprocess)?;
        pipeline::predict_corpus(&ckpt.model, &docs, k, preprocess)?
    } else {
        let display = args.input.display().to_string();
        let text = std::fs::read_to_string(&args.input).map_err(|e| Error::Io {
            path: display,
            source: e,
        })?;
        let id = args
            .input
            .file_stem()
            .map_or_else(|| "input".to_string(), |s| s.to_string_lossy().into_owned());
        let doc = pipeline::predict_text(&ckpt.model, &id, &text, k, preprocess)?;
        PredictionFile {
            k,
            preprocess,
            documents: vec![doc],
        }
    };
    file.save(&args.out)?;
    println!(
        "{}",
        serde_json::json!({
            "documents": file.documents.len(),
            "k": k,
            "out": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let predictions = PredictionFile::load(&args.pred)?;
    let gold = load_aligned(&args.gold, predictions.preprocess)?;
    let report = pipeline::evaluate_predictions(&predictions, &gold, args.iou)?;
    write_or_print(args.out.as_deref(), &serde_json::to_string_pretty(&report)?)
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    if args.k_min == 0 || args.k_step == 0 || args.k_min > args.k_max {
        return Err(Error::Config(format!(
            "invalid sweep grid: k_min {}, k_max {}, k_step {}",
            args.k_min, args.k_max, args.k_step
        )));
    }
    let ckpt = Checkpoint::load(&args.ckpt)?;
    let docs = load_aligned(&args.gold, ckpt.config.preprocess)?;
    let ks: Vec<usize> = (args.k_min..=args.k_max).step_by(args.k_step).collect();
    let rows = eval::k_sweep(&ckpt.model, &docs, &ks, MatchMode::Iou(args.iou))?;
    write_or_print(args.out.as_deref(), eval::sweep_to_csv(&rows).trim_end())
}

fn run_aggregate(args: AggregateArgs) -> Result<()> {
    let mut reports = Vec::with_capacity(args.reports.len());
    for path in &args.reports {
        let display = path.display().to_string();
        let data = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: display.clone(),
            source: e,
        })?;
        let report: EvaluationReport =
            serde_json::from_str(&data).map_err(|e| Error::Format {
                path: display,
                line: 0,
                message: e.to_string(),
            })?;
        reports.push(report);
    }
    let summary = pipeline::aggregate_reports(&reports)?;
    write_or_print(args.out.as_deref(), &serde_json::to_string_pretty(&summary)?)
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let corpus = synth::generate(&synth::SynthConfig {
        documents: args.documents,
        seed: args.seed,
        distractors: args.distractors,
        mismatches: args.mismatches,
    })?;
    ingest::save_corpus(&args.out, &corpus.documents)?;
    println!(
        "{}",
        serde_json::json!({
            "documents": corpus.documents.len(),
            "planted_mismatches": corpus
                .planted
                .iter()
                .map(|p| serde_json::json!({"doc": p.doc_id, "entity": p.entity_id}))
                .collect::<Vec<_>>(),
            "out": args.out.display().to_string(),
        })
    );
    Ok(())
}

fn run_stats(args: StatsArgs) -> Result<()> {
    let preprocess = parse_preprocess(&args.preprocess)?;
    let docs = load_aligned(&args.corpus, preprocess)?;
    let report = ingest::boundary_mismatch_report(&docs);
    let warnings: usize = docs.iter().map(|d| d.warnings.len()).sum();
    let entities: usize = docs.iter().map(|d| d.entities.len()).sum();
    let flagged: usize = docs
        .iter()
        .map(|d| d.entities.iter().filter(|e| e.mismatch).count())
        .sum();
    println!(
        "{}",
        serde_json::json!({
            "documents": docs.len(),
            "entities": entities,
            "flagged_entities": flagged,
            "preprocess_warnings": warnings,
            "total_relations": report.total_relations,
            "relations_any_endpoint_mismatched": report.any_endpoint,
            "relations_both_endpoints_mismatched": report.both_endpoints,
            "any_endpoint_rate": report.any_rate().ok(),
            "both_endpoints_rate": report.both_rate().ok(),
        })
    );
    Ok(())
}

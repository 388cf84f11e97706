use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use dgcn_core::config::InferenceConfig;
use dgcn_core::corpus::TargetSequence;
use dgcn_core::eval::{evaluate, weight_trend, write_rows_csv, write_trend_csv, EvalReport};
use dgcn_core::graph::GraphSnapshot;
use dgcn_core::inference::{generate, to_prediction, Prediction};
use dgcn_core::instance::{Instance, Inventories};
use dgcn_core::io::{read_jsonl, write_jsonl};
use dgcn_core::model::Model;
use dgcn_core::syntax::{read_annotated, AnnotatedDocument};
use dgcn_core::training::{train, write_log, Example};
use dgcn_core::{Error, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;

pub const MODEL_FILE: &str = "model.ckpt";
pub const MODEL_CONFIG_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const SNAPSHOTS_FILE: &str = "snapshots.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const PER_DOCUMENT_FILE: &str = "per_document.csv";
pub const TREND_FILE: &str = "trend.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    path.clone().ok_or_else(|| Error::Config(format!("{key} is not set")))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Data(format!("{}: no such file", path.display())))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resolve documents that have at least one present phrase; the rest are counted and skipped.
fn training_instances<'v>(
    docs: &[AnnotatedDocument],
    inv: &'v Inventories,
    split: &str,
) -> Result<Vec<(Instance<'v>, TargetSequence)>> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for doc in docs {
        if doc.present.is_empty() {
            skipped += 1;
            continue;
        }
        let inst = Instance::new(doc, inv)?;
        let target = inst.target()?;
        out.push((inst, target));
    }
    if skipped > 0 {
        log::warn!("{split}: skipped {skipped} documents without present keyphrases");
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{split}: no document has a present keyphrase")));
    }
    Ok(out)
}

/// Lines of `word v1 … v_d`; a leading `count dim` header is skipped.
pub fn read_word_vectors(path: &Path, inv: &Inventories, dim: usize) -> Result<Vec<(usize, Vec<f64>)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if i == 0 && values.len() == 1 {
            continue;
        }
        if values.len() != dim {
            return Err(Error::Data(format!(
                "{}:{}: expected {dim} values, found {}",
                path.display(),
                i + 1,
                values.len()
            )));
        }
        if let Some(idx) = inv.vocab.get(word) {
            rows.push((idx, values));
        }
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub train_documents: usize,
    pub valid_documents: usize,
    pub parameters: usize,
    pub steps: usize,
    pub best_step: usize,
    pub best_valid_ppl: f64,
    pub stopped_early: bool,
}

pub fn run_train(cfg: &RunConfig, out: &Path) -> Result<TrainSummary> {
    let train_path = require(&cfg.data.train, "data.train")?;
    let valid_path = require(&cfg.data.valid, "data.valid")?;
    require_file(&train_path)?;
    require_file(&valid_path)?;
    if let Some(v) = &cfg.data.word_vectors {
        require_file(v)?;
    }
    let train_docs = read_annotated(&train_path)?;
    let valid_docs = read_annotated(&valid_path)?;
    let inv = Inventories::build(&train_docs, cfg.data.vocab_size)?;
    let train_set = training_instances(&train_docs, &inv, "train")?;
    let valid_set = training_instances(&valid_docs, &inv, "valid")?;
    let model_cfg = cfg.model_config(&inv);
    let mut model = Model::<f32>::new(model_cfg.clone(), cfg.train.seed)?;
    if let Some(v) = &cfg.data.word_vectors {
        let rows = read_word_vectors(v, &inv, cfg.encoder.d_w)?;
        log::info!("loaded {} pretrained word vectors", rows.len());
        model.set_word_vectors(&rows)?;
    }
    log::info!(
        "training on {} documents ({} validation), {} parameters",
        train_set.len(),
        valid_set.len(),
        model.params.num_scalars()
    );
    let train_ex: Vec<Example> = train_set.iter().map(|(inst, target)| Example { inst, target }).collect();
    let valid_ex: Vec<Example> = valid_set.iter().map(|(inst, target)| Example { inst, target }).collect();
    let outcome = train(&mut model, &train_ex, &valid_ex, &cfg.train)?;

    create_dir(out)?;
    cfg.echo(out)?;
    inv.save(out)?;
    write_json(&out.join(MODEL_CONFIG_FILE), &model_cfg)?;
    model.save(&out.join(MODEL_FILE))?;
    write_log(&out.join(TRAIN_LOG_FILE), &outcome.log)?;
    let summary = TrainSummary {
        train_documents: train_set.len(),
        valid_documents: valid_set.len(),
        parameters: model.params.num_scalars(),
        steps: outcome.steps,
        best_step: outcome.best_step,
        best_valid_ppl: outcome.best_ppl,
        stopped_early: outcome.stopped_early,
    };
    write_json(&out.join(TRAIN_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Inventories from the model directory and parameters checked against the run's model configuration.
pub fn load_model(cfg: &RunConfig, model_dir: &Path) -> Result<(Inventories, Model<f32>)> {
    let inv = Inventories::load(model_dir)?;
    let model = Model::<f32>::load(cfg.model_config(&inv), &model_dir.join(MODEL_FILE))?;
    Ok((inv, model))
}

pub fn decode_documents(
    model: &Model<f32>,
    inv: &Inventories,
    docs: &[AnnotatedDocument],
    inference: &InferenceConfig,
    record_graphs: bool,
) -> Result<(Vec<Prediction>, Vec<GraphSnapshot>)> {
    let results: Vec<Result<(Prediction, Vec<GraphSnapshot>)>> = docs
        .par_iter()
        .map(|doc| {
            let inst = Instance::new(doc, inv)?;
            let g = generate(model, &inst, inference, record_graphs)?;
            Ok((to_prediction(&inst, &g)?, g.snapshots))
        })
        .collect();
    let mut predictions = Vec::with_capacity(docs.len());
    let mut snapshots = Vec::new();
    for r in results {
        let (p, s) = r?;
        predictions.push(p);
        snapshots.extend(s);
    }
    Ok((predictions, snapshots))
}

pub fn run_decode(cfg: &RunConfig, model_dir: &Path, input: &Path, out: &Path, record_graphs: bool) -> Result<usize> {
    require_file(input)?;
    let (inv, model) = load_model(cfg, model_dir)?;
    let docs = read_annotated(input)?;
    let (predictions, snapshots) = decode_documents(&model, &inv, &docs, &cfg.inference, record_graphs)?;
    create_dir(out)?;
    cfg.echo(out)?;
    write_jsonl(&out.join(PREDICTIONS_FILE), &predictions)?;
    if record_graphs {
        write_jsonl(&out.join(SNAPSHOTS_FILE), &snapshots)?;
    }
    Ok(predictions.len())
}

pub fn run_eval(cfg: &RunConfig, predictions: &Path, gold: &Path, out: &Path) -> Result<EvalReport> {
    require_file(predictions)?;
    require_file(gold)?;
    let preds: Vec<Prediction> = read_jsonl(predictions)?;
    let docs = read_annotated(gold)?;
    let report = evaluate(&preds, &docs)?;
    create_dir(out)?;
    cfg.echo(out)?;
    write_json(&out.join(REPORT_FILE), &report)?;
    write_rows_csv(&out.join(PER_DOCUMENT_FILE), &report.rows)?;
    Ok(report)
}

pub fn run_analyze(cfg: &RunConfig, snapshots: &Path, gold: &Path, out: &Path) -> Result<usize> {
    if !snapshots.is_file() {
        return Err(Error::Data(format!(
            "{}: no graph snapshots; decode with --snapshots first",
            snapshots.display()
        )));
    }
    require_file(gold)?;
    let snaps: Vec<GraphSnapshot> = read_jsonl(snapshots)?;
    let docs = read_annotated(gold)?;
    let rows = weight_trend(&snaps, &docs)?;
    create_dir(out)?;
    cfg.echo(out)?;
    write_trend_csv(&out.join(TREND_FILE), &rows)?;
    Ok(rows.len())
}

#[derive(Debug, Serialize)]
pub struct SweepRow {
    pub lambda1: f64,
    pub lambda2: f64,
    pub f1_at_m: f64,
    pub f1_at_5_filled: f64,
    pub f1_at_5: f64,
    pub f1_at_10: f64,
    pub ndcg_at_10: f64,
    pub avg_predicted: f64,
    pub avg_correct: f64,
}

/// Decode and score `input` for every `(λ₁, λ₂)` pair with one loaded model.
pub fn run_sweep(
    cfg: &RunConfig,
    model_dir: &Path,
    input: &Path,
    lambda1: &[f64],
    lambda2: &[f64],
    out: &Path,
) -> Result<Vec<SweepRow>> {
    if lambda1.is_empty() || lambda2.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    require_file(input)?;
    let (inv, model) = load_model(cfg, model_dir)?;
    let docs = read_annotated(input)?;
    let mut rows = Vec::new();
    for &l1 in lambda1 {
        for &l2 in lambda2 {
            let inference = InferenceConfig {
                lambda1: l1,
                lambda2: l2,
                ..cfg.inference.clone()
            };
            inference.validate()?;
            let (preds, _) = decode_documents(&model, &inv, &docs, &inference, false)?;
            let r = evaluate(&preds, &docs)?;
            log::info!("λ1={l1} λ2={l2}: F1@M {:.4}", r.f1_at_m);
            rows.push(SweepRow {
                lambda1: l1,
                lambda2: l2,
                f1_at_m: r.f1_at_m,
                f1_at_5_filled: r.f1_at_5_filled,
                f1_at_5: r.f1_at_5,
                f1_at_10: r.f1_at_10,
                ndcg_at_10: r.ndcg_at_10,
                avg_predicted: r.avg_predicted,
                avg_correct: r.avg_correct,
            });
        }
    }
    create_dir(out)?;
    cfg.echo(out)?;
    let path = out.join(SWEEP_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

/// Comma-separated grid values.
pub fn parse_grid(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Config(format!("grid value `{t}`: {e}"))))
        .collect()
}

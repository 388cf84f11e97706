//! Ranking metrics over stemmed phrases and the per-phrase edge-weight trend analysis.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{stem_all, FILLER, RESERVED_TOKENS};
use crate::error::{Error, Result};
use crate::graph::{classify_edges, target_mask, EdgeClass, GraphSnapshot};
use crate::inference::Prediction;
use crate::syntax::AnnotatedDocument;

/// Published Inspec counts for the full model, kept for reference.
pub mod reference {
    pub const INSPEC_AVG_PREDICTED: f64 = 5.40;
    pub const INSPEC_AVG_CORRECT: f64 = 2.26;
}

fn dedupe(phrases: impl IntoIterator<Item = Vec<String>>) -> Vec<Vec<String>> {
    let mut seen = HashSet::new();
    phrases.into_iter().filter(|p| !p.is_empty() && seen.insert(p.clone())).collect()
}

/// Stemmed predictions and truth of one document, both deduplicated with order kept.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchSet {
    pub id: String,
    pub predictions: Vec<Vec<String>>,
    pub truth: Vec<Vec<String>>,
    /// Truth index credited to each prediction.
    pub matches: Vec<Option<usize>>,
}

impl MatchSet {
    /// Stems surface-form phrases, then matches.
    pub fn new(id: &str, predictions: &[Vec<String>], truth: &[Vec<String>]) -> Self {
        Self::from_stemmed(
            id,
            predictions.iter().map(|p| stem_all(p)).collect(),
            truth.iter().map(|p| stem_all(p)).collect(),
        )
    }

    pub fn from_stemmed(id: &str, predictions: Vec<Vec<String>>, truth: Vec<Vec<String>>) -> Self {
        let predictions = dedupe(predictions);
        let truth = dedupe(truth);
        let index: HashMap<&Vec<String>, usize> = truth.iter().enumerate().map(|(j, t)| (t, j)).collect();
        let matches = predictions.iter().map(|p| index.get(p).copied()).collect();
        Self {
            id: id.to_string(),
            predictions,
            truth,
            matches,
        }
    }

    pub fn correct(&self) -> usize {
        self.correct_in(self.predictions.len())
    }

    pub fn correct_in(&self, k: usize) -> usize {
        self.matches.iter().take(k).filter(|m| m.is_some()).count()
    }

    /// Top `k` predictions, padded with non-matching sentinel phrases when short.
    pub fn filled(&self, k: usize) -> MatchSet {
        let mut predictions: Vec<Vec<String>> = self.predictions.iter().take(k).cloned().collect();
        let mut matches: Vec<Option<usize>> = self.matches.iter().take(k).copied().collect();
        while predictions.len() < k {
            predictions.push(vec![RESERVED_TOKENS[FILLER].to_string(), predictions.len().to_string()]);
            matches.push(None);
        }
        MatchSet {
            id: self.id.clone(),
            predictions,
            truth: self.truth.clone(),
            matches,
        }
    }
}

fn f1(correct: usize, predicted: usize, truth: usize) -> f64 {
    if correct == 0 || predicted == 0 || truth == 0 {
        return 0.0;
    }
    let p = correct as f64 / predicted as f64;
    let r = correct as f64 / truth as f64;
    2.0 * p * r / (p + r)
}

/// F1 over all predictions.
pub fn f1_at_m(m: &MatchSet) -> f64 {
    f1(m.correct(), m.predictions.len(), m.truth.len())
}

/// F1 over exactly five predictions, padding with wrong answers.
pub fn f1_at_5_filled(m: &MatchSet) -> f64 {
    let f = m.filled(5);
    f1(f.correct(), f.predictions.len(), f.truth.len())
}

/// F1 over the first `min(k, |pred|)` predictions.
pub fn f1_at_k_unfilled(m: &MatchSet, k: usize) -> f64 {
    let n = k.min(m.predictions.len());
    f1(m.correct_in(n), n, m.truth.len())
}

pub fn ndcg_at_k(m: &MatchSet, k: usize) -> f64 {
    if m.truth.is_empty() {
        return 0.0;
    }
    let gain = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = m.matches.iter().take(k).enumerate().filter(|(_, x)| x.is_some()).map(|(i, _)| gain(i)).sum();
    let idcg: f64 = (0..k.min(m.truth.len())).map(gain).sum();
    dcg / idcg
}

pub fn ndcg_at_10(m: &MatchSet) -> f64 {
    ndcg_at_k(m, 10)
}

/// Mean unique-prediction count and mean correct count.
pub fn count_stats(sets: &[MatchSet]) -> (f64, f64) {
    if sets.is_empty() {
        return (0.0, 0.0);
    }
    let n = sets.len() as f64;
    let predicted: usize = sets.iter().map(|m| m.predictions.len()).sum();
    let correct: usize = sets.iter().map(MatchSet::correct).sum();
    (predicted as f64 / n, correct as f64 / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentScores {
    pub id: String,
    pub predicted: usize,
    pub truth: usize,
    pub correct: usize,
    pub f1_at_m: f64,
    pub f1_at_5_filled: f64,
    pub f1_at_5: f64,
    pub f1_at_10: f64,
    pub ndcg_at_10: f64,
}

impl DocumentScores {
    pub fn of(m: &MatchSet) -> Self {
        Self {
            id: m.id.clone(),
            predicted: m.predictions.len(),
            truth: m.truth.len(),
            correct: m.correct(),
            f1_at_m: f1_at_m(m),
            f1_at_5_filled: f1_at_5_filled(m),
            f1_at_5: f1_at_k_unfilled(m, 5),
            f1_at_10: f1_at_k_unfilled(m, 10),
            ndcg_at_10: ndcg_at_10(m),
        }
    }
}

/// Macro averages over documents with a non-empty present-phrase set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub documents: usize,
    pub skipped_empty_truth: usize,
    pub missing_predictions: usize,
    pub f1_at_m: f64,
    pub f1_at_5_filled: f64,
    pub f1_at_5: f64,
    pub f1_at_10: f64,
    pub ndcg_at_10: f64,
    pub avg_predicted: f64,
    pub avg_correct: f64,
    #[serde(skip)]
    pub rows: Vec<DocumentScores>,
}

fn mean(rows: &[DocumentScores], f: impl Fn(&DocumentScores) -> f64) -> f64 {
    if rows.is_empty() {
        0.0
    } else {
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    }
}

/// Score predictions against the present phrases of `gold`. A gold document
/// without a prediction line counts as predicting nothing.
pub fn evaluate(predictions: &[Prediction], gold: &[AnnotatedDocument]) -> Result<EvalReport> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::new();
    for p in predictions {
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(Error::Data(format!("duplicate prediction for document {}", p.id)));
        }
    }
    let gold_ids: HashSet<&str> = gold.iter().map(|d| d.id.as_str()).collect();
    if let Some(p) = predictions.iter().find(|p| !gold_ids.contains(p.id.as_str())) {
        return Err(Error::Data(format!("prediction for unknown document {}", p.id)));
    }
    let mut sets = Vec::new();
    let mut skipped = 0;
    let mut missing = 0;
    for doc in gold {
        let predicted = match by_id.get(doc.id.as_str()) {
            Some(p) => p.phrases.clone(),
            None => {
                missing += 1;
                Vec::new()
            }
        };
        let m = MatchSet::new(&doc.id, &predicted, &doc.present);
        if m.truth.is_empty() {
            skipped += 1;
            continue;
        }
        sets.push(m);
    }
    let rows: Vec<DocumentScores> = sets.iter().map(DocumentScores::of).collect();
    let (avg_predicted, avg_correct) = count_stats(&sets);
    Ok(EvalReport {
        documents: rows.len(),
        skipped_empty_truth: skipped,
        missing_predictions: missing,
        f1_at_m: mean(&rows, |r| r.f1_at_m),
        f1_at_5_filled: mean(&rows, |r| r.f1_at_5_filled),
        f1_at_5: mean(&rows, |r| r.f1_at_5),
        f1_at_10: mean(&rows, |r| r.f1_at_10),
        ndcg_at_10: mean(&rows, |r| r.ndcg_at_10),
        avg_predicted,
        avg_correct,
        rows,
    })
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Data(format!("{}: {e}", path.display()))
}

pub fn write_rows_csv(path: &Path, rows: &[DocumentScores]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Weight statistics of one edge class after scoring for phrase `phrase_index`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub phrase_index: usize,
    pub class: String,
    pub edge_count: usize,
    /// Mean over all edges of the class pooled across documents.
    pub mean_weight: Option<f64>,
    /// Mean of per-document class means, over documents having such edges.
    pub doc_mean_weight: Option<f64>,
}

/// Per-phrase mean edge weight of each class. Target words are tokens whose stem
/// occurs in a gold present phrase.
pub fn weight_trend(snapshots: &[GraphSnapshot], gold: &[AnnotatedDocument]) -> Result<Vec<TrendRow>> {
    if snapshots.is_empty() {
        return Err(Error::Data("no graph snapshots to analyze".into()));
    }
    let docs: HashMap<&str, &AnnotatedDocument> = gold.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut masks: HashMap<&str, Vec<bool>> = HashMap::new();
    // (count, pooled sum, per-document means) for each (phrase, class)
    let mut acc: BTreeMap<(usize, usize), (usize, f64, Vec<f64>)> = BTreeMap::new();
    for snap in snapshots {
        let doc = docs
            .get(snap.id.as_str())
            .ok_or_else(|| Error::Data(format!("snapshot for unknown document {}", snap.id)))?;
        if doc.tokens.len() != snap.nodes {
            return Err(Error::Mismatch(format!(
                "snapshot of {} has {} nodes, document has {} tokens",
                snap.id,
                snap.nodes,
                doc.tokens.len()
            )));
        }
        let mask = masks.entry(doc.id.as_str()).or_insert_with(|| {
            let present: Vec<Vec<String>> = doc.present.iter().map(|p| stem_all(p)).collect();
            target_mask(&stem_all(&doc.forms()), &present)
        });
        let graph = snap.graph()?;
        let classes = classify_edges(&graph, &snap.weights, mask)?;
        for (ci, class) in EdgeClass::ALL.iter().enumerate() {
            let stats = classes.get(*class);
            let entry = acc.entry((snap.phrase_index, ci)).or_default();
            entry.0 += stats.count();
            entry.1 += stats.weight_sum;
            entry.2.extend(stats.mean_weight());
        }
    }
    Ok(acc
        .into_iter()
        .map(|((p, ci), (count, sum, means))| TrendRow {
            phrase_index: p,
            class: EdgeClass::ALL[ci].name().to_string(),
            edge_count: count,
            mean_weight: (count > 0).then(|| sum / count as f64),
            doc_mean_weight: (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64),
        })
        .collect())
}

pub fn write_trend_csv(path: &Path, rows: &[TrendRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_error(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

//! Inference protocols, ranking metrics, and the two reference baselines.

mod metrics;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, PriorsTable, Split, VideoRecord, Vocab};
use crate::error::{Error, Result};
use crate::model::{forward_batch, predict_all_verbs, BatchInput, ModelParams};
use crate::ndnum::Array;
use crate::textgeo::{phrase_key, verb_key, EmbeddingTable};

pub use metrics::{
    average_precision, compute_metrics, variance_report, ClassMetrics, MetricsReport, VarianceReport, VarianceRow,
};

/// Records per forward batch at inference time.
const INFER_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// The ground-truth verb is given and used as the query.
    WithLabels,
    /// Every verb is queried and each adverb takes its maximum score.
    LabelFree,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::WithLabels => "with-labels",
            Protocol::LabelFree => "label-free",
        })
    }
}

/// Per-video adverb scores with ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub ids: Vec<String>,
    pub gt_verbs: Vec<usize>,
    pub gt_adverbs: Vec<usize>,
    /// `N` rows of `A` scores.
    pub scores: Vec<Vec<f64>>,
    pub protocol: Protocol,
}

impl ScoreMatrix {
    pub fn empty(protocol: Protocol) -> Self {
        Self {
            ids: Vec::new(),
            gt_verbs: Vec::new(),
            gt_adverbs: Vec::new(),
            scores: Vec::new(),
            protocol,
        }
    }

    fn for_records(records: &[&VideoRecord], scores: Vec<Vec<f64>>, protocol: Protocol) -> Self {
        Self {
            ids: records.iter().map(|r| r.id.clone()).collect(),
            gt_verbs: records.iter().map(|r| r.verb).collect(),
            gt_adverbs: records.iter().map(|r| r.adverb).collect(),
            scores,
            protocol,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `id, gt_verb, gt_adverb, <one column per adverb>, protocol`.
    pub fn write_csv(&self, vocab: &Vocab, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["id".to_string(), "gt_verb".into(), "gt_adverb".into()];
        header.extend(vocab.adverbs().iter().cloned());
        header.push("protocol".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![
                self.ids[i].clone(),
                vocab.verbs()[self.gt_verbs[i]].clone(),
                vocab.adverbs()[self.gt_adverbs[i]].clone(),
            ];
            row.extend(self.scores[i].iter().map(|s| format!("{s:e}")));
            row.push(self.protocol.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// `V x d_text` matrix of verb embeddings in vocab order.
pub fn verb_queries(vocab: &Vocab, table: &EmbeddingTable) -> Result<Array<f32>> {
    let mut data = Vec::with_capacity(vocab.num_verbs() * table.dim());
    for v in vocab.verbs() {
        data.extend_from_slice(table.get(&verb_key(v))?);
    }
    Array::matrix(vocab.num_verbs(), table.dim(), data)
}

fn split_refs(corpus: &Corpus, split: Split) -> Vec<&VideoRecord> {
    corpus.split(split).collect()
}

/// Eval-mode scores with the ground-truth verb as the query.
pub fn infer_with_labels(
    params: &ModelParams<f32>,
    corpus: &Corpus,
    table: &EmbeddingTable,
    split: Split,
) -> Result<ScoreMatrix> {
    let records = split_refs(corpus, split);
    let queries = verb_queries(&corpus.vocab, table)?;
    let mut scores = Vec::with_capacity(records.len());
    for chunk in records.chunks(INFER_BATCH) {
        let items: Vec<_> = chunk
            .iter()
            .map(|r| (&corpus.features_of(r).segments, queries.row(r.verb)))
            .collect();
        let input = BatchInput::<f32>::assemble(&items)?;
        let out = forward_batch(params, &input, None)?;
        for b in 0..chunk.len() {
            scores.push(out.predictions.row(b).iter().map(|&x| x as f64).collect());
        }
    }
    Ok(ScoreMatrix::for_records(&records, scores, Protocol::WithLabels))
}

/// Eval-mode scores maximized over every verb query.
pub fn infer_label_free(
    params: &ModelParams<f32>,
    corpus: &Corpus,
    table: &EmbeddingTable,
    split: Split,
) -> Result<ScoreMatrix> {
    let records = split_refs(corpus, split);
    let queries = verb_queries(&corpus.vocab, table)?;
    let mut scores = Vec::with_capacity(records.len());
    for r in &records {
        let seq = corpus.features_of(r);
        let mask = vec![true; seq.t()];
        let all = predict_all_verbs(params, &seq.segments, &mask, &queries)?;
        scores.push(column_max(&all));
    }
    Ok(ScoreMatrix::for_records(&records, scores, Protocol::LabelFree))
}

/// Per-column maximum of a `V x A` score table.
pub fn column_max(all: &Array<f32>) -> Vec<f64> {
    let mut best = vec![f64::NEG_INFINITY; all.cols()];
    for v in 0..all.rows() {
        for (b, &x) in best.iter_mut().zip(all.row(v)) {
            *b = b.max(x as f64);
        }
    }
    best
}

pub fn infer(
    params: &ModelParams<f32>,
    corpus: &Corpus,
    table: &EmbeddingTable,
    split: Split,
    protocol: Protocol,
) -> Result<ScoreMatrix> {
    match protocol {
        Protocol::WithLabels => infer_with_labels(params, corpus, table, split),
        Protocol::LabelFree => infer_label_free(params, corpus, table, split),
    }
}

/// Co-occurrence counts as scores: the ground-truth verb's row with labels,
/// the per-adverb totals without.
pub fn baseline_priors(priors: &PriorsTable, records: &[VideoRecord], protocol: Protocol) -> ScoreMatrix {
    let refs: Vec<&VideoRecord> = records.iter().collect();
    let scores = records
        .iter()
        .map(|r| {
            let counts = match protocol {
                Protocol::WithLabels => &priors.counts[r.verb],
                Protocol::LabelFree => &priors.marginals,
            };
            counts.iter().map(|&c| c as f64).collect()
        })
        .collect();
    ScoreMatrix::for_records(&refs, scores, protocol)
}

/// Dot products between each video's pooled joint-space embedding and the
/// phrase embeddings `"v a"`; maximized over verbs without labels.
pub fn baseline_retrieval(
    corpus: &Corpus,
    table: &EmbeddingTable,
    split: Split,
    protocol: Protocol,
) -> Result<ScoreMatrix> {
    if corpus.features.d_pool() != table.dim() {
        return Err(Error::dim(
            "baseline_retrieval",
            format!("pooled dim {} vs text dim {}", corpus.features.d_pool(), table.dim()),
        ));
    }
    let vocab = &corpus.vocab;
    let mut phrases = vec![Vec::with_capacity(vocab.num_adverbs()); vocab.num_verbs()];
    for (v, verb) in vocab.verbs().iter().enumerate() {
        for adverb in vocab.adverbs() {
            phrases[v].push(table.get(&phrase_key(verb, adverb))?);
        }
    }
    let dot = |x: &[f32], y: &[f32]| -> f64 { x.iter().zip(y).map(|(&a, &b)| a as f64 * b as f64).sum() };

    let records = split_refs(corpus, split);
    let scores = records
        .iter()
        .map(|r| {
            let pooled = &corpus.features_of(r).pooled;
            (0..vocab.num_adverbs())
                .map(|a| match protocol {
                    Protocol::WithLabels => dot(pooled, phrases[r.verb][a]),
                    Protocol::LabelFree => (0..vocab.num_verbs())
                        .map(|v| dot(pooled, phrases[v][a]))
                        .fold(f64::NEG_INFINITY, f64::max),
                })
                .collect()
        })
        .collect();
    Ok(ScoreMatrix::for_records(&records, scores, protocol))
}

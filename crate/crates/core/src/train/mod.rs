//! Losses, batching, and the training loop with per-metric best tracking.

mod loss;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split, VideoRecord, Vocab};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, infer, verb_queries, MetricsReport, Protocol};
use crate::model::{forward_graph, param_leaves, save_checkpoint, BatchInput, ModelConfig, ModelParams, Param};
use crate::ndnum::{AdamConfig, AdamState, Array, NodeId, Rng, Scalar, Stream, Tape};
use crate::textgeo::{EmbeddingTable, TargetMode, TargetTable};

pub use loss::{ce_value, loss_ce, loss_reg, reg_value};

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const EVALS_FILE: &str = "evals.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_FILE: &str = "best.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossMode {
    /// Cross-entropy over adverbs.
    Cls,
    /// Mean-square regression onto geometry-scaled targets.
    Reg,
    /// Regression with the scale fixed to 1.
    RegFixed,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::Cls => "cls",
            LossMode::Reg => "reg",
            LossMode::RegFixed => "reg-fixed",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(LossMode::Cls),
            "reg" => Ok(LossMode::Reg),
            "reg-fixed" => Ok(LossMode::RegFixed),
            other => Err(Error::Config(format!("unknown loss {other:?} (cls, reg, reg-fixed)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub loss: LossMode,
    /// Use antonym pairs in the regression targets.
    pub antonym_mode: bool,
    /// Evaluate every this many epochs and after the last one.
    pub eval_every: usize,
    pub seed: u64,
    /// Also evaluate without verb labels.
    pub label_free_eval: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            lr: 1e-4,
            weight_decay: 5e-5,
            batch_size: 512,
            loss: LossMode::Reg,
            antonym_mode: true,
            eval_every: 10,
            seed: 0,
            label_free_eval: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("batch_size and eval_every must be positive".into()));
        }
        if self.loss == LossMode::Reg && self.antonym_mode && !vocab.has_antonyms() {
            return Err(Error::Config(
                "regression with antonyms needs a vocab with an antonym map; pass --no-antonyms".into(),
            ));
        }
        Ok(())
    }

    pub fn target_mode(&self) -> Option<TargetMode> {
        match (self.loss, self.antonym_mode) {
            (LossMode::Cls, _) => None,
            (LossMode::Reg, true) => Some(TargetMode::Antonym),
            (LossMode::Reg, false) => Some(TargetMode::NoAntonym),
            (LossMode::RegFixed, _) => Some(TargetMode::Fixed),
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// Protocols evaluated during training.
    pub fn protocols(&self) -> Vec<Protocol> {
        let mut p = vec![Protocol::WithLabels];
        if self.label_free_eval {
            p.push(Protocol::LabelFree);
        }
        p
    }
}

/// Record indices for one epoch: shuffled by `(seed, epoch)` and cut into
/// batches of `batch_size`, the last one possibly shorter.
pub fn make_batches(n: usize, seed: u64, epoch: u64, batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    Rng::with_index(seed, Stream::BatchOrder, epoch).shuffle(&mut order);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Labels for one batch.
#[derive(Clone, Debug)]
pub enum Supervision<T: Scalar> {
    Classes(Vec<usize>),
    /// `B x A`.
    Targets(Array<T>),
}

/// Pads the records' features into one batch with their verb queries.
pub fn assemble_batch<T: Scalar>(
    corpus: &Corpus,
    records: &[&VideoRecord],
    queries: &Array<f32>,
) -> Result<BatchInput<T>> {
    let items: Vec<_> = records
        .iter()
        .map(|r| (&corpus.features_of(r).segments, queries.row(r.verb)))
        .collect();
    BatchInput::assemble(&items)
}

fn record_loss<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ModelParams<T>,
    input: &BatchInput<T>,
    sup: &Supervision<T>,
    dropout: Option<&mut Rng>,
) -> Result<(Vec<NodeId>, NodeId)> {
    let leaves = param_leaves(tape, params)?;
    let out = forward_graph(tape, &params.config, &leaves, input, dropout)?;
    let loss = match sup {
        Supervision::Classes(gt) => loss_ce(tape, out.predictions, gt)?,
        Supervision::Targets(y) => {
            let y = tape.leaf(y.clone())?;
            loss_reg(tape, out.predictions, y)?
        }
    };
    Ok((leaves, loss))
}

/// Scalar loss of one batch.
pub fn batch_loss<T: Scalar>(
    params: &ModelParams<T>,
    input: &BatchInput<T>,
    sup: &Supervision<T>,
    dropout: Option<&mut Rng>,
) -> Result<T> {
    let mut tape = Tape::new();
    let (_, loss) = record_loss(&mut tape, params, input, sup, dropout)?;
    Ok(tape.value(loss).data()[0])
}

/// Loss and its gradient for every parameter, in parameter order.
pub fn loss_and_grads<T: Scalar>(
    params: &ModelParams<T>,
    input: &BatchInput<T>,
    sup: &Supervision<T>,
    dropout: Option<&mut Rng>,
) -> Result<(T, Vec<Array<T>>)> {
    let mut tape = Tape::new();
    let (leaves, loss) = record_loss(&mut tape, params, input, sup, dropout)?;
    let mut grads = tape.backward(loss)?;
    let g = leaves
        .iter()
        .zip(&params.params)
        .map(|(&id, p)| grads.take(id).unwrap_or_else(|| Array::zeros(p.value.shape().to_vec())))
        .collect();
    Ok((tape.value(loss).data()[0], g))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
    pub protocol: Protocol,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestEntry {
    pub protocol: Protocol,
    pub metric: String,
    pub value: f64,
    pub epoch: usize,
    pub checkpoint: Option<PathBuf>,
}

/// Best value of each `(protocol, metric)`, tracked independently.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BestTracker {
    entries: Vec<BestEntry>,
}

impl BestTracker {
    pub fn entries(&self) -> &[BestEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, protocol: Protocol, metric: &str) -> Option<&BestEntry> {
        self.entries
            .iter()
            .find(|e| e.protocol == protocol && e.metric == metric)
    }

    /// Records an evaluation; true when it is a new best (strictly greater,
    /// or the first value seen).
    pub fn observe(&mut self, protocol: Protocol, metric: &str, value: f64, epoch: usize) -> bool {
        match self
            .entries
            .iter_mut()
            .find(|e| e.protocol == protocol && e.metric == metric)
        {
            Some(e) if value > e.value => {
                e.value = value;
                e.epoch = epoch;
                e.checkpoint = None;
                true
            }
            Some(_) => false,
            None => {
                self.entries.push(BestEntry {
                    protocol,
                    metric: metric.to_string(),
                    value,
                    epoch,
                    checkpoint: None,
                });
                true
            }
        }
    }

    fn set_checkpoint(&mut self, protocol: Protocol, metric: &str, path: PathBuf) {
        if let Some(e) = self
            .entries
            .iter_mut()
            .find(|e| e.protocol == protocol && e.metric == metric)
        {
            e.checkpoint = Some(path);
        }
    }

    /// Rebuilds the bests from an evaluation log, without checkpoints.
    pub fn replay(evals: &[EvalEntry]) -> Self {
        let mut t = Self::default();
        for e in evals {
            t.observe(e.protocol, &e.metric, e.value, e.epoch);
        }
        t
    }

    pub fn without_checkpoints(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|e| BestEntry {
                    checkpoint: None,
                    ..e.clone()
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: ModelParams<f32>,
    pub tracker: BestTracker,
    pub loss_log: Vec<LossEntry>,
    pub evals: Vec<EvalEntry>,
    /// Reports from the last evaluation, one per protocol.
    pub last_reports: Vec<MetricsReport>,
}

pub fn best_checkpoint_name(protocol: Protocol, metric: &str) -> String {
    format!("best_{protocol}_{metric}.ckpt")
}

fn check_compatible(corpus: &Corpus, table: &EmbeddingTable, model: &ModelConfig) -> Result<()> {
    model.validate()?;
    let mismatch = |what: &str, model_v: usize, data_v: usize| {
        Err(Error::Config(format!("model {what} = {model_v} but data has {data_v}")))
    };
    if model.num_adverbs != corpus.vocab.num_adverbs() {
        return mismatch("num_adverbs", model.num_adverbs, corpus.vocab.num_adverbs());
    }
    if model.d_seg != corpus.features.d_seg() {
        return mismatch("d_seg", model.d_seg, corpus.features.d_seg());
    }
    if model.d_text != table.dim() {
        return mismatch("d_text", model.d_text, table.dim());
    }
    Ok(())
}

struct TargetSource {
    table: TargetTable,
    /// Drop the antonym entries of fixed targets.
    positive_only: bool,
}

impl TargetSource {
    fn batch<T: Scalar>(&self, records: &[&VideoRecord], num_adverbs: usize) -> Result<Array<T>> {
        let mut data = Vec::with_capacity(records.len() * num_adverbs);
        for r in records {
            let t = self
                .table
                .get(r.verb, r.adverb)
                .ok_or_else(|| Error::Contract(format!("no target for record {}", r.id)))?;
            data.extend(t.values.iter().map(|&x| {
                let x = if self.positive_only { x.max(0.0) } else { x };
                T::from_f64_lossy(x)
            }));
        }
        Array::matrix(records.len(), num_adverbs, data)
    }
}

fn evaluate(
    params: &ModelParams<f32>,
    corpus: &Corpus,
    table: &EmbeddingTable,
    protocols: &[Protocol],
) -> Result<Vec<MetricsReport>> {
    protocols
        .iter()
        .map(|&p| compute_metrics(&infer(params, corpus, table, Split::Test, p)?, &corpus.vocab))
        .collect()
}

/// Trains from a seeded initialization. With `out_dir`, writes the final
/// and best-per-metric checkpoints plus the loss and evaluation logs.
pub fn fit(
    corpus: &Corpus,
    table: &EmbeddingTable,
    model: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<FitResult> {
    check_compatible(corpus, table, model)?;
    cfg.validate(&corpus.vocab)?;
    let queries = verb_queries(&corpus.vocab, table)?;
    let train: Vec<&VideoRecord> = corpus.split(Split::Train).collect();
    if cfg.epochs > 0 && train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let targets = match cfg.target_mode() {
        Some(mode) => {
            let owned: Vec<VideoRecord> = train.iter().map(|r| (*r).clone()).collect();
            Some(TargetSource {
                table: TargetTable::build(&corpus.vocab, table, mode, &owned)?,
                positive_only: mode == TargetMode::Fixed && !cfg.antonym_mode,
            })
        }
        None => None,
    };
    let has_test = corpus.split(Split::Test).next().is_some();

    let init = ModelParams::<f32>::init(model, &mut Rng::new(cfg.seed, Stream::Init))?;
    let names: Vec<String> = init.params.iter().map(|p| p.name.clone()).collect();
    let mut values: Vec<Array<f32>> = init.params.into_iter().map(|p| p.value).collect();
    let snapshot = |values: &[Array<f32>]| {
        ModelParams::from_parts(
            model.clone(),
            names
                .iter()
                .zip(values)
                .map(|(n, v)| Param {
                    name: n.clone(),
                    value: v.clone(),
                })
                .collect(),
        )
    };
    let mut adam = AdamState::new(cfg.adam(), &values.iter().collect::<Vec<_>>());
    let mut dropout = Rng::new(cfg.seed, Stream::Dropout);
    let protocols = cfg.protocols();

    let mut tracker = BestTracker::default();
    let mut loss_log = Vec::new();
    let mut evals = Vec::new();
    let mut last_reports = Vec::new();

    for epoch in 1..=cfg.epochs {
        for idx in make_batches(train.len(), cfg.seed, epoch as u64, cfg.batch_size) {
            let recs: Vec<&VideoRecord> = idx.iter().map(|&i| train[i]).collect();
            let input = assemble_batch::<f32>(corpus, &recs, &queries)?;
            let sup = match &targets {
                Some(t) => Supervision::Targets(t.batch(&recs, model.num_adverbs)?),
                None => Supervision::Classes(recs.iter().map(|r| r.adverb).collect()),
            };
            let step = adam.step_count() + 1;
            let params = snapshot(&values)?;
            let diverged = |e: Error| match e {
                Error::NonFinite(op) => {
                    Error::Degenerate(format!("non-finite value in {op} at epoch {epoch}, step {step}"))
                }
                other => other,
            };
            let (loss, grads) = loss_and_grads(&params, &input, &sup, Some(&mut dropout)).map_err(diverged)?;
            adam.step(&mut values, &grads)?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(diverged(Error::NonFinite("adam_step")));
            }
            loss_log.push(LossEntry {
                epoch,
                step,
                loss: loss as f64,
                lr: cfg.lr,
            });
        }

        if has_test && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            let params = snapshot(&values)?;
            last_reports = evaluate(&params, corpus, table, &protocols)?;
            for report in &last_reports {
                for (metric, value) in report.values() {
                    evals.push(EvalEntry {
                        epoch,
                        metric: metric.to_string(),
                        value,
                        protocol: report.protocol,
                    });
                    if tracker.observe(report.protocol, metric, value, epoch) {
                        if let Some(dir) = out_dir {
                            let path = dir.join(best_checkpoint_name(report.protocol, metric));
                            save_checkpoint(&params, &path)?;
                            tracker.set_checkpoint(report.protocol, metric, path);
                        }
                    }
                }
            }
        }
    }

    let params = snapshot(&values)?;
    if let Some(dir) = out_dir {
        save_checkpoint(&params, &dir.join(FINAL_CHECKPOINT))?;
        write_loss_log(&dir.join(TRAIN_LOG_FILE), &loss_log)?;
        write_evals(&dir.join(EVALS_FILE), &evals)?;
        let best = dir.join(BEST_FILE);
        std::fs::write(&best, serde_json::to_vec_pretty(&tracker)?).map_err(|e| Error::io(&best, e))?;
    }
    Ok(FitResult {
        params,
        tracker,
        loss_log,
        evals,
        last_reports,
    })
}

pub fn write_loss_log(path: &Path, log: &[LossEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for e in log {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_evals(path: &Path, evals: &[EvalEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "metric", "value", "protocol"])?;
    for e in evals {
        w.write_record([
            e.epoch.to_string(),
            e.metric.clone(),
            format!("{:e}", e.value),
            e.protocol.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_evals(path: &Path) -> Result<Vec<EvalEntry>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let bad = || Error::load(path, format!("malformed row {row:?}"));
        let protocol = match &row[3] {
            "with-labels" => Protocol::WithLabels,
            "label-free" => Protocol::LabelFree,
            _ => return Err(bad()),
        };
        out.push(EvalEntry {
            epoch: row[0].parse().map_err(|_| bad())?,
            metric: row[1].to_string(),
            value: row[2].parse().map_err(|_| bad())?,
            protocol,
        });
    }
    Ok(out)
}

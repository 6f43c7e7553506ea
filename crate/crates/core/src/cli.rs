//! Reproducible commands behind the `actchange` binary. Each writes a
//! `run_manifest.json` recording its effective config, seed and input
//! digests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{build_priors, Corpus, Split, EMBEDDINGS_FILE, FEATURES_FILE, MANIFEST_FILE, VOCAB_FILE};
use crate::error::{Error, Result};
use crate::eval::{
    baseline_priors, baseline_retrieval, compute_metrics, infer, variance_report, MetricsReport, Protocol,
    VarianceReport,
};
use crate::model::{load_checkpoint, ModelConfig};
use crate::synth::{gen_corpus, SynthSpec};
use crate::textgeo::{
    adverb_key, geometry_export, phrase_key, verb_key, verb_sentence_key, EmbeddingTable, GeometrySummary,
};
use crate::train::{fit, FitResult, TrainConfig};

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const REPORT_FILE: &str = "report.json";
pub const GEOMETRY_FILE: &str = "geometry.csv";
pub const GEOMETRY_SUMMARY_FILE: &str = "geometry_summary.json";
pub const VARIANCE_FILE: &str = "variance.json";

pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub build: String,
    /// Input path to SHA-256, taken before the command runs.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
}

impl RunManifest {
    fn start<C: Serialize>(command: &str, config: &C, seed: Option<u64>, inputs: &[&Path]) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        let mut digests = BTreeMap::new();
        for p in inputs {
            digests.insert(p.display().to_string(), file_digest(p)?);
        }
        Ok(Self {
            command: command.to_string(),
            config_hash: sha256_hex(&serde_json::to_vec(&config)?),
            config,
            seed,
            build: BUILD_ID.to_string(),
            inputs: digests,
            outputs: Vec::new(),
        })
    }

    fn finish(mut self, dir: &Path, outputs: Vec<PathBuf>) -> Result<Self> {
        self.outputs = outputs;
        write_json(&dir.join(RUN_MANIFEST_FILE), &self)?;
        Ok(self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Model and training settings as read from a config file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::load(path, e.to_string()))
    }

    /// Takes the data-dependent model dimensions from the corpus.
    pub fn fit_to_data(&mut self, corpus: &Corpus, table: &EmbeddingTable) {
        self.model.d_seg = corpus.features.d_seg();
        self.model.d_text = table.dim();
        self.model.num_adverbs = corpus.vocab.num_adverbs();
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }
}

/// Corpus directory plus the embedding file (defaulting to the one inside
/// the directory).
#[derive(Clone, Debug)]
pub struct DataPaths {
    pub corpus_dir: PathBuf,
    pub embeddings: PathBuf,
}

impl DataPaths {
    pub fn new(corpus_dir: &Path, embeddings: Option<&Path>) -> Self {
        Self {
            corpus_dir: corpus_dir.to_path_buf(),
            embeddings: embeddings.map_or_else(|| corpus_dir.join(EMBEDDINGS_FILE), Path::to_path_buf),
        }
    }

    fn corpus_files(&self) -> Vec<PathBuf> {
        [VOCAB_FILE, MANIFEST_FILE, FEATURES_FILE]
            .iter()
            .map(|f| self.corpus_dir.join(f))
            .collect()
    }

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = self.corpus_files();
        v.push(self.embeddings.clone());
        v
    }

    pub fn load(&self) -> Result<(Corpus, EmbeddingTable)> {
        Ok((
            Corpus::load_dir(&self.corpus_dir)?,
            EmbeddingTable::read(&self.embeddings)?,
        ))
    }
}

fn refs(paths: &[PathBuf]) -> Vec<&Path> {
    paths.iter().map(PathBuf::as_path).collect()
}

/// Writes a synthetic corpus. Refuses to replace existing files unless
/// `force` is set.
pub fn cmd_gen_synth(spec: &SynthSpec, out: &Path, force: bool) -> Result<RunManifest> {
    spec.validate()?;
    let files: Vec<PathBuf> = [
        VOCAB_FILE,
        MANIFEST_FILE,
        FEATURES_FILE,
        EMBEDDINGS_FILE,
        RUN_MANIFEST_FILE,
    ]
    .iter()
    .map(|f| out.join(f))
    .collect();
    if !force {
        if let Some(existing) = files.iter().find(|p| p.exists()) {
            return Err(Error::Config(format!(
                "{} already exists; pass --force to overwrite",
                existing.display()
            )));
        }
    }
    let manifest = RunManifest::start("gen-synth", spec, Some(spec.seed), &[])?;
    ensure_dir(out)?;
    gen_corpus(spec)?.write_dir(out)?;
    manifest.finish(out, files[..4].to_vec())
}

pub struct TrainOutcome {
    pub fit: FitResult,
    pub config: RunConfig,
    pub manifest: RunManifest,
}

pub fn cmd_train(data: &DataPaths, config: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    let inputs = data.inputs();
    let (corpus, table) = data.load()?;
    let mut config = config.clone();
    config.fit_to_data(&corpus, &table);
    let manifest = RunManifest::start("train", &config, Some(config.train.seed), &refs(&inputs))?;
    ensure_dir(out)?;
    let fit = fit(&corpus, &table, &config.model, &config.train, Some(out))?;
    let mut outputs: Vec<PathBuf> = [
        crate::train::FINAL_CHECKPOINT,
        crate::train::TRAIN_LOG_FILE,
        crate::train::EVALS_FILE,
        crate::train::BEST_FILE,
    ]
    .iter()
    .map(|f| out.join(f))
    .collect();
    outputs.extend(fit.tracker.entries().iter().filter_map(|b| b.checkpoint.clone()));
    outputs.sort();
    outputs.dedup();
    let manifest = manifest.finish(out, outputs)?;
    Ok(TrainOutcome { fit, config, manifest })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// `model`, `priors` or `retrieval`.
    pub source: String,
    pub metrics: MetricsReport,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

fn write_report(
    out: &Path,
    corpus: &Corpus,
    scores: &crate::eval::ScoreMatrix,
    source: &str,
    seeds: Vec<u64>,
    config_hash: String,
) -> Result<Report> {
    let metrics = compute_metrics(scores, &corpus.vocab)?;
    scores.write_csv(&corpus.vocab, &out.join(SCORES_FILE))?;
    let report = Report {
        source: source.to_string(),
        metrics,
        seeds,
        config_hash,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Scores the test split with a checkpoint. The training seed is taken from
/// a run manifest next to the checkpoint when one exists.
pub fn cmd_eval(checkpoint: &Path, data: &DataPaths, protocol: Protocol, out: &Path) -> Result<Report> {
    let mut inputs = data.inputs();
    inputs.push(checkpoint.to_path_buf());
    let (corpus, table) = data.load()?;
    let params = load_checkpoint(checkpoint)?;
    if params.config.num_adverbs != corpus.vocab.num_adverbs() || params.config.d_text != table.dim() {
        return Err(Error::Config(
            "checkpoint does not match the corpus vocab or embedding dims".into(),
        ));
    }
    let seeds = checkpoint
        .parent()
        .map(|d| d.join(RUN_MANIFEST_FILE))
        .filter(|p| p.exists())
        .and_then(|p| RunManifest::read(&p).ok())
        .and_then(|m| m.seed)
        .into_iter()
        .collect();
    #[derive(Serialize)]
    struct EvalConfig<'a> {
        protocol: Protocol,
        model: &'a ModelConfig,
    }
    let cfg = EvalConfig {
        protocol,
        model: &params.config,
    };
    let manifest = RunManifest::start("eval", &cfg, None, &refs(&inputs))?;
    ensure_dir(out)?;
    let scores = infer(&params, &corpus, &table, Split::Test, protocol)?;
    let report = write_report(out, &corpus, &scores, "model", seeds, manifest.config_hash.clone())?;
    manifest.finish(out, vec![out.join(SCORES_FILE), out.join(REPORT_FILE)])?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    Priors,
    Retrieval,
}

pub fn cmd_baseline(data: &DataPaths, kind: BaselineKind, protocol: Protocol, out: &Path) -> Result<Report> {
    let (corpus, table, inputs) = match kind {
        BaselineKind::Priors => (Corpus::load_dir(&data.corpus_dir)?, None, data.corpus_files()),
        BaselineKind::Retrieval => {
            let (c, t) = data.load()?;
            (c, Some(t), data.inputs())
        }
    };
    #[derive(Serialize)]
    struct BaselineConfig {
        kind: BaselineKind,
        protocol: Protocol,
    }
    let manifest = RunManifest::start("baseline", &BaselineConfig { kind, protocol }, None, &refs(&inputs))?;
    ensure_dir(out)?;
    let scores = match (kind, &table) {
        (BaselineKind::Priors, _) => {
            let priors = build_priors(&corpus.records, &corpus.vocab);
            baseline_priors(&priors, &corpus.split_records(Split::Test), protocol)
        }
        (BaselineKind::Retrieval, Some(t)) => baseline_retrieval(&corpus, t, Split::Test, protocol)?,
        (BaselineKind::Retrieval, None) => unreachable!("retrieval always loads embeddings"),
    };
    let source = match kind {
        BaselineKind::Priors => "priors",
        BaselineKind::Retrieval => "retrieval",
    };
    let report = write_report(out, &corpus, &scores, source, Vec::new(), manifest.config_hash.clone())?;
    manifest.finish(out, vec![out.join(SCORES_FILE), out.join(REPORT_FILE)])?;
    Ok(report)
}

/// Exports `d` and `delta` per pair. With a manifest, pairs absent from it
/// are marked as such and may lack embeddings.
pub fn cmd_geometry(vocab: &Path, embeddings: &Path, manifest: Option<&Path>, out: &Path) -> Result<GeometrySummary> {
    let mut inputs = vec![vocab.to_path_buf(), embeddings.to_path_buf()];
    inputs.extend(manifest.map(Path::to_path_buf));
    let v = crate::corpus::Vocab::read(vocab)?;
    let table = EmbeddingTable::read(embeddings)?;
    let presence = match manifest {
        Some(m) => {
            let mut p = vec![vec![false; v.num_adverbs()]; v.num_verbs()];
            for r in crate::corpus::read_manifest(m, &v)? {
                p[r.verb][r.adverb] = true;
            }
            Some(p)
        }
        None => None,
    };
    #[derive(Serialize)]
    struct GeometryConfig {
        restricted_to_manifest: bool,
    }
    let run = RunManifest::start(
        "geometry",
        &GeometryConfig {
            restricted_to_manifest: manifest.is_some(),
        },
        None,
        &refs(&inputs),
    )?;
    ensure_dir(out)?;
    let geo = geometry_export(&v, &table, presence.as_deref())?;
    geo.write_csv(&v, &out.join(GEOMETRY_FILE))?;
    let summary = geo.summary();
    write_json(&out.join(GEOMETRY_SUMMARY_FILE), &summary)?;
    run.finish(out, vec![out.join(GEOMETRY_FILE), out.join(GEOMETRY_SUMMARY_FILE)])?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceOutcome {
    pub seeds: Vec<u64>,
    /// Final-epoch with-label evaluation of each seed's run.
    pub runs: Vec<MetricsReport>,
    pub report: VarianceReport,
}

/// Trains once per seed (into `out/seed_<s>`) and summarizes the final
/// with-label metrics as mean and population std.
pub fn cmd_variance(data: &DataPaths, config: &RunConfig, seeds: &[u64], out: &Path) -> Result<VarianceOutcome> {
    if seeds.len() < 2 {
        return Err(Error::Config("variance needs at least 2 seeds".into()));
    }
    let inputs = data.inputs();
    let (corpus, table) = data.load()?;
    let mut config = config.clone();
    config.fit_to_data(&corpus, &table);
    #[derive(Serialize)]
    struct VarianceConfig<'a> {
        run: &'a RunConfig,
        seeds: &'a [u64],
    }
    let manifest = RunManifest::start(
        "variance",
        &VarianceConfig { run: &config, seeds },
        None,
        &refs(&inputs),
    )?;
    ensure_dir(out)?;
    let mut runs = Vec::with_capacity(seeds.len());
    let mut outputs = Vec::new();
    for &seed in seeds {
        let dir = out.join(format!("seed_{seed}"));
        ensure_dir(&dir)?;
        let cfg = TrainConfig {
            seed,
            ..config.train.clone()
        };
        let result = fit(&corpus, &table, &config.model, &cfg, Some(&dir))?;
        let report = result
            .last_reports
            .into_iter()
            .find(|r| r.protocol == Protocol::WithLabels)
            .ok_or_else(|| Error::Config("no evaluation ran; need epochs >= 1 and a test split".into()))?;
        runs.push(report);
        outputs.push(dir);
    }
    let report = variance_report(&runs)?;
    let outcome = VarianceOutcome {
        seeds: seeds.to_vec(),
        runs,
        report,
    };
    write_json(&out.join(VARIANCE_FILE), &outcome)?;
    outputs.push(out.join(VARIANCE_FILE));
    manifest.finish(out, outputs)?;
    Ok(outcome)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ValidationSummary {
    pub videos: usize,
    pub train: usize,
    pub test: usize,
    pub verbs: usize,
    pub adverbs: usize,
    pub antonyms: bool,
    pub d_seg: usize,
    pub d_pool: usize,
    pub d_text: usize,
    pub embedding_keys: usize,
}

/// Loads a corpus directory and its text embeddings with full validation and
/// checks that every key needed for targets of the present pairs exists.
pub fn cmd_validate(data: &DataPaths) -> Result<ValidationSummary> {
    let (corpus, table) = data.load()?;
    let vocab = &corpus.vocab;
    let mut required: Vec<String> = Vec::new();
    for v in vocab.verbs() {
        required.push(verb_key(v));
        required.push(verb_sentence_key(v));
    }
    required.extend(vocab.adverbs().iter().map(|a| adverb_key(a)));
    let mut pairs: Vec<(usize, usize)> = corpus.records.iter().map(|r| (r.verb, r.adverb)).collect();
    pairs.sort_unstable();
    pairs.dedup();
    for (v, a) in pairs {
        let (vn, an) = (&vocab.verbs()[v], &vocab.adverbs()[a]);
        required.push(phrase_key(vn, an));
        if let Some(h) = vocab.antonym(a) {
            required.push(phrase_key(vn, &vocab.adverbs()[h]));
        }
    }
    if let Some(missing) = required.into_iter().find(|k| !table.contains(k)) {
        return Err(Error::MissingKey(missing));
    }
    Ok(ValidationSummary {
        videos: corpus.records.len(),
        train: corpus.split(Split::Train).count(),
        test: corpus.split(Split::Test).count(),
        verbs: vocab.num_verbs(),
        adverbs: vocab.num_adverbs(),
        antonyms: vocab.has_antonyms(),
        d_seg: corpus.features.d_seg(),
        d_pool: corpus.features.d_pool(),
        d_text: table.dim(),
        embedding_keys: table.len(),
    })
}

/// Plain-text `metric  mean ± std` table.
pub fn format_variance(report: &VarianceReport) -> String {
    let mut s = format!("{:<8} {}\n", "metric", "mean ± std");
    for row in &report.rows {
        s.push_str(&format!("{:<8} {}\n", row.metric, row.display));
    }
    s
}

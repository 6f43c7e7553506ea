//! Vocabulary, video manifests, feature stores, and the co-occurrence
//! priors table.

mod store;
mod vocab;

use std::fmt;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use store::{FeatureSequence, FeatureStore, FEATURES_MAGIC, FEATURES_VERSION};
pub use vocab::{Vocab, VocabFile};

pub const VOCAB_FILE: &str = "vocab.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const FEATURES_FILE: &str = "features.bin";
pub const EMBEDDINGS_FILE: &str = "text_embeddings.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// One line of `manifest.jsonl`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestLine {
    pub id: String,
    pub verb: String,
    pub adverb: String,
    pub split: Split,
    pub t: usize,
}

/// A labelled video, with verb and adverb resolved to vocab ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VideoRecord {
    pub id: String,
    pub verb: usize,
    pub adverb: usize,
    pub split: Split,
    /// Number of 1-second segments.
    pub t: usize,
}

impl VideoRecord {
    pub fn to_line(&self, vocab: &Vocab) -> ManifestLine {
        ManifestLine {
            id: self.id.clone(),
            verb: vocab.verbs()[self.verb].clone(),
            adverb: vocab.adverbs()[self.adverb].clone(),
            split: self.split,
            t: self.t,
        }
    }
}

pub fn read_manifest(path: &Path, vocab: &Vocab) -> Result<Vec<VideoRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let m: ManifestLine =
            serde_json::from_str(&line).map_err(|e| Error::load(path, format!("line {}: {e}", lineno + 1)))?;
        let verb = vocab
            .verb_id(&m.verb)
            .ok_or_else(|| Error::load(path, format!("record {:?}: unknown verb {:?}", m.id, m.verb)))?;
        let adverb = vocab
            .adverb_id(&m.adverb)
            .ok_or_else(|| Error::load(path, format!("record {:?}: unknown adverb {:?}", m.id, m.adverb)))?;
        if m.t == 0 {
            return Err(Error::load(path, format!("record {:?}: t must be >= 1", m.id)));
        }
        out.push(VideoRecord {
            id: m.id,
            verb,
            adverb,
            split: m.split,
            t: m.t,
        });
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[VideoRecord], vocab: &Vocab) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, &r.to_line(vocab))?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// A loaded, validated corpus. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocab,
    pub records: Vec<VideoRecord>,
    pub features: FeatureStore,
}

impl Corpus {
    /// Cross-checks records against the vocab and feature store.
    pub fn new(vocab: Vocab, records: Vec<VideoRecord>, features: FeatureStore) -> Result<Self> {
        let origin = PathBuf::from("<corpus>");
        for r in &records {
            if r.verb >= vocab.num_verbs() || r.adverb >= vocab.num_adverbs() {
                return Err(Error::load(
                    &origin,
                    format!("record {:?}: label out of vocab range", r.id),
                ));
            }
            let seq = features
                .get(&r.id)
                .ok_or_else(|| Error::load(&origin, format!("record {:?}: no features", r.id)))?;
            if seq.t() != r.t {
                return Err(Error::load(
                    &origin,
                    format!("record {:?}: manifest t={} but {} stored rows", r.id, r.t, seq.t()),
                ));
            }
        }
        Ok(Self {
            vocab,
            records,
            features,
        })
    }

    pub fn load(manifest: &Path, features: &Path, vocab: &Path) -> Result<Self> {
        let vocab = Vocab::read(vocab)?;
        let records = read_manifest(manifest, &vocab)?;
        let store = FeatureStore::read(features)?;
        Self::new(vocab, records, store).map_err(|e| match e {
            Error::Load { detail, .. } => Error::load(features, detail),
            other => other,
        })
    }

    /// Loads `vocab.json`, `manifest.jsonl` and `features.bin` from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load(
            &dir.join(MANIFEST_FILE),
            &dir.join(FEATURES_FILE),
            &dir.join(VOCAB_FILE),
        )
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        self.vocab.write(&dir.join(VOCAB_FILE))?;
        write_manifest(&dir.join(MANIFEST_FILE), &self.records, &self.vocab)?;
        self.features.write(&dir.join(FEATURES_FILE))
    }

    pub fn features_of(&self, record: &VideoRecord) -> &FeatureSequence {
        self.features
            .get(&record.id)
            .expect("corpus invariant: every record has features")
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn split_records(&self, split: Split) -> Vec<VideoRecord> {
        self.split(split).cloned().collect()
    }
}

/// Verb-adverb co-occurrence counts over the training split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PriorsTable {
    /// `V x A`.
    pub counts: Vec<Vec<u64>>,
    /// Per-adverb totals (column sums of `counts`).
    pub marginals: Vec<u64>,
}

/// Counts `(verb, adverb)` pairs among the train-split records; test
/// records are ignored.
pub fn build_priors(records: &[VideoRecord], vocab: &Vocab) -> PriorsTable {
    let mut counts = vec![vec![0u64; vocab.num_adverbs()]; vocab.num_verbs()];
    let mut marginals = vec![0u64; vocab.num_adverbs()];
    for r in records.iter().filter(|r| r.split == Split::Train) {
        counts[r.verb][r.adverb] += 1;
        marginals[r.adverb] += 1;
    }
    PriorsTable { counts, marginals }
}

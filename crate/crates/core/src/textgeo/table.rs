use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn verb_key(verb: &str) -> String {
    format!("verb:{verb}")
}

pub fn adverb_key(adverb: &str) -> String {
    format!("adverb:{adverb}")
}

/// Key of the phrase embedding for `"<verb> <adverb>"`.
pub fn phrase_key(verb: &str, adverb: &str) -> String {
    format!("sent:{verb} {adverb}")
}

/// Key of the bare-verb sentence embedding.
pub fn verb_sentence_key(verb: &str) -> String {
    format!("sent:{verb}")
}

#[derive(Serialize, Deserialize)]
struct Line {
    key: String,
    vec: Vec<f32>,
}

/// Frozen text embeddings keyed by typed strings (`verb:`, `adverb:`,
/// `sent:`). All vectors share one dimension.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, key: impl Into<String>, vec: Vec<f32>) -> Result<()> {
        let key = key.into();
        if vec.len() != self.dim {
            return Err(Error::dim(
                "embedding_table",
                format!("{key}: length {} vs dim {}", vec.len(), self.dim),
            ));
        }
        if vec.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("embedding_table"));
        }
        self.entries.insert(key, vec);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<&[f32]> {
        self.entries
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingKey(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Embedding widened to `f64`.
    pub fn get_f64(&self, key: &str) -> Result<Vec<f64>> {
        Ok(self.get(key)?.iter().map(|&x| x as f64).collect())
    }

    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        for (k, v) in &self.entries {
            h.update((k.len() as u64).to_le_bytes());
            h.update(k.as_bytes());
            for x in v {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table: Option<Self> = None;
        for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let l: Line =
                serde_json::from_str(&line).map_err(|e| Error::load(path, format!("line {}: {e}", lineno + 1)))?;
            let t = table.get_or_insert_with(|| Self::new(l.vec.len()));
            t.insert(l.key, l.vec)
                .map_err(|e| Error::load(path, format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(table.unwrap_or_default())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        for (key, vec) in &self.entries {
            serde_json::to_writer(
                &mut buf,
                &Line {
                    key: key.clone(),
                    vec: vec.clone(),
                },
            )?;
            buf.push(b'\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}

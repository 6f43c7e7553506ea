use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// On-disk shape of `vocab.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VocabFile {
    pub verbs: Vec<String>,
    pub adverbs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub antonyms: Option<Vec<[String; 2]>>,
}

/// Verb and adverb tables with an optional antonym involution.
///
/// When the antonym map is present it covers every adverb: each adverb
/// has exactly one partner and no adverb is its own partner.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    verbs: Vec<String>,
    adverbs: Vec<String>,
    antonym: Option<Vec<usize>>,
    verb_ids: HashMap<String, usize>,
    adverb_ids: HashMap<String, usize>,
}

fn index(names: &[String], kind: &str) -> Result<HashMap<String, usize>> {
    let mut ids = HashMap::with_capacity(names.len());
    for (i, n) in names.iter().enumerate() {
        if n.is_empty() {
            return Err(Error::Config(format!("invalid {kind} name {n:?}")));
        }
        if ids.insert(n.clone(), i).is_some() {
            return Err(Error::Config(format!("duplicate {kind} {n:?}")));
        }
    }
    Ok(ids)
}

impl Vocab {
    pub fn new(verbs: Vec<String>, adverbs: Vec<String>, antonym_pairs: Option<&[(usize, usize)]>) -> Result<Self> {
        let verb_ids = index(&verbs, "verb")?;
        let adverb_ids = index(&adverbs, "adverb")?;
        let antonym = match antonym_pairs {
            None => None,
            Some(pairs) => {
                let mut map = vec![usize::MAX; adverbs.len()];
                for &(a, b) in pairs {
                    if a >= adverbs.len() || b >= adverbs.len() {
                        return Err(Error::Config(format!("antonym pair ({a}, {b}) out of range")));
                    }
                    if a == b {
                        return Err(Error::Config(format!(
                            "adverb {:?} cannot be its own antonym",
                            adverbs[a]
                        )));
                    }
                    if map[a] != usize::MAX || map[b] != usize::MAX {
                        return Err(Error::Config(format!(
                            "adverb paired twice in ({:?}, {:?})",
                            adverbs[a], adverbs[b]
                        )));
                    }
                    map[a] = b;
                    map[b] = a;
                }
                if let Some(i) = map.iter().position(|&x| x == usize::MAX) {
                    return Err(Error::Config(format!(
                        "partial antonym map: {:?} has no antonym",
                        adverbs[i]
                    )));
                }
                Some(map)
            }
        };
        Ok(Self {
            verbs,
            adverbs,
            antonym,
            verb_ids,
            adverb_ids,
        })
    }

    pub fn from_file(file: &VocabFile) -> Result<Self> {
        let lookup = |n: &String| -> Result<usize> {
            file.adverbs
                .iter()
                .position(|a| a == n)
                .ok_or_else(|| Error::Config(format!("antonym names unknown adverb {n:?}")))
        };
        let pairs = file
            .antonyms
            .as_ref()
            .map(|ps| {
                ps.iter()
                    .map(|[a, b]| Ok((lookup(a)?, lookup(b)?)))
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        Self::new(file.verbs.clone(), file.adverbs.clone(), pairs.as_deref())
    }

    pub fn to_file(&self) -> VocabFile {
        VocabFile {
            verbs: self.verbs.clone(),
            adverbs: self.adverbs.clone(),
            antonyms: self.antonym.as_ref().map(|map| {
                map.iter()
                    .enumerate()
                    .filter(|(a, b)| a < *b)
                    .map(|(a, &b)| [self.adverbs[a].clone(), self.adverbs[b].clone()])
                    .collect()
            }),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VocabFile = serde_json::from_str(&text).map_err(|e| Error::load(path, e.to_string()))?;
        Self::from_file(&file).map_err(|e| Error::load(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file())?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Content digest used to key cached targets.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&self.to_file()).expect("vocab serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }

    pub fn adverbs(&self) -> &[String] {
        &self.adverbs
    }

    pub fn num_verbs(&self) -> usize {
        self.verbs.len()
    }

    pub fn num_adverbs(&self) -> usize {
        self.adverbs.len()
    }

    pub fn verb_id(&self, name: &str) -> Option<usize> {
        self.verb_ids.get(name).copied()
    }

    pub fn adverb_id(&self, name: &str) -> Option<usize> {
        self.adverb_ids.get(name).copied()
    }

    pub fn has_antonyms(&self) -> bool {
        self.antonym.is_some()
    }

    pub fn antonym(&self, adverb: usize) -> Option<usize> {
        self.antonym.as_ref().map(|m| m[adverb])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn antonym_is_involution() {
        let v = Vocab::new(
            names(&["chop"]),
            names(&["finely", "coarsely", "slowly", "quickly"]),
            Some(&[(0, 1), (2, 3)]),
        )
        .unwrap();
        for a in 0..4 {
            let h = v.antonym(a).unwrap();
            assert_ne!(h, a);
            assert_eq!(v.antonym(h), Some(a));
        }
    }

    #[test]
    fn partial_map_rejected() {
        let err = Vocab::new(names(&["chop"]), names(&["a", "b", "c"]), Some(&[(0, 1)]));
        assert!(err.is_err());
    }

    #[test]
    fn self_antonym_rejected() {
        assert!(Vocab::new(names(&["v"]), names(&["a", "b"]), Some(&[(0, 0), (1, 1)])).is_err());
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(Vocab::new(names(&["v", "v"]), names(&["a"]), None).is_err());
    }

    #[test]
    fn file_round_trip() {
        let v = Vocab::new(names(&["v", "w"]), names(&["a", "b"]), Some(&[(1, 0)])).unwrap();
        let back = Vocab::from_file(&v.to_file()).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.digest(), back.digest());
    }

    #[test]
    fn json_without_antonyms() {
        let f: VocabFile = serde_json::from_str(r#"{"verbs":["v"],"adverbs":["a","b","c"]}"#).unwrap();
        let v = Vocab::from_file(&f).unwrap();
        assert!(!v.has_antonyms());
        assert_eq!(v.antonym(0), None);
    }
}

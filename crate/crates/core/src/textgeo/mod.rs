//! Verb-adverb text geometry and the regression targets built from it.
//!
//! For a verb `v` and adverb `a` with antonym `h(a)`, the action change is
//! the distance between the phrase embeddings of `"v a"` and `"v h(a)"`,
//! scaled by the cosine similarity of the bare verb and adverb embeddings.
//! The cosine keeps its sign. All geometry runs in `f64`.

mod table;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{VideoRecord, Vocab};
use crate::error::{Error, Result};

pub use table::{adverb_key, phrase_key, verb_key, verb_sentence_key, EmbeddingTable};

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity; zero-norm inputs are degenerate.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine of a zero-norm embedding".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot / (na * nb))
}

fn antonym_of(vocab: &Vocab, adverb: usize) -> Result<usize> {
    vocab
        .antonym(adverb)
        .ok_or_else(|| Error::Config("antonym-based geometry needs a vocab with an antonym map".into()))
}

/// Distance between the phrase embeddings of `"v a"` and `"v h(a)"`.
pub fn distance_d(table: &EmbeddingTable, vocab: &Vocab, verb: usize, adverb: usize) -> Result<f64> {
    let v = &vocab.verbs()[verb];
    let h = antonym_of(vocab, adverb)?;
    let pos = table.get_f64(&phrase_key(v, &vocab.adverbs()[adverb]))?;
    let neg = table.get_f64(&phrase_key(v, &vocab.adverbs()[h]))?;
    Ok(euclidean(&pos, &neg))
}

/// Cosine between the bare verb and adverb embeddings.
pub fn verb_adverb_cosine(table: &EmbeddingTable, vocab: &Vocab, verb: usize, adverb: usize) -> Result<f64> {
    let gv = table.get_f64(&verb_key(&vocab.verbs()[verb]))?;
    let ga = table.get_f64(&adverb_key(&vocab.adverbs()[adverb]))?;
    cosine(&gv, &ga)
}

/// `d(v, a)` scaled by the verb-adverb cosine.
pub fn delta(table: &EmbeddingTable, vocab: &Vocab, verb: usize, adverb: usize) -> Result<f64> {
    let d = distance_d(table, vocab, verb, adverb)?;
    Ok(d * verb_adverb_cosine(table, vocab, verb, adverb)?)
}

/// Distance from `"v a"` to the bare-verb sentence `"v"`, scaled by the
/// verb-adverb cosine. Never consults the antonym map.
pub fn delta_no_antonym(table: &EmbeddingTable, vocab: &Vocab, verb: usize, adverb: usize) -> Result<f64> {
    let v = &vocab.verbs()[verb];
    let pos = table.get_f64(&phrase_key(v, &vocab.adverbs()[adverb]))?;
    let bare = table.get_f64(&verb_sentence_key(v))?;
    Ok(euclidean(&pos, &bare) * verb_adverb_cosine(table, vocab, verb, adverb)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMode {
    /// `+delta` at the label, `-delta` at its antonym.
    Antonym,
    /// `+delta` (against the bare verb) at the label only.
    NoAntonym,
    /// `delta` fixed to 1; the embedding table is not read.
    Fixed,
}

/// Length-`A` regression target for one labelled video.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionTarget {
    pub values: Vec<f64>,
}

pub fn build_target(
    verb: usize,
    adverb: usize,
    vocab: &Vocab,
    table: &EmbeddingTable,
    mode: TargetMode,
) -> Result<RegressionTarget> {
    let mut values = vec![0.0; vocab.num_adverbs()];
    match mode {
        TargetMode::Antonym => {
            let h = antonym_of(vocab, adverb)?;
            let d = delta(table, vocab, verb, adverb)?;
            values[adverb] = d;
            values[h] = -d;
        }
        TargetMode::NoAntonym => {
            values[adverb] = delta_no_antonym(table, vocab, verb, adverb)?;
        }
        TargetMode::Fixed => {
            values[adverb] = 1.0;
            if let Some(h) = vocab.antonym(adverb) {
                values[h] = -1.0;
            }
        }
    }
    Ok(RegressionTarget { values })
}

pub fn build_record_target(
    record: &VideoRecord,
    vocab: &Vocab,
    table: &EmbeddingTable,
    mode: TargetMode,
) -> Result<RegressionTarget> {
    build_target(record.verb, record.adverb, vocab, table, mode)
}

/// Targets for every `(verb, adverb)` pair a corpus uses, computed once.
///
/// Targets depend only on labels, so a table is keyed by the vocab digest,
/// the embedding digest, and the mode.
#[derive(Clone, Debug)]
pub struct TargetTable {
    pub vocab_digest: String,
    pub table_digest: String,
    pub mode: TargetMode,
    targets: HashMap<(usize, usize), RegressionTarget>,
}

impl TargetTable {
    pub fn build(vocab: &Vocab, table: &EmbeddingTable, mode: TargetMode, records: &[VideoRecord]) -> Result<Self> {
        let mut targets = HashMap::new();
        for r in records {
            if let std::collections::hash_map::Entry::Vacant(e) = targets.entry((r.verb, r.adverb)) {
                e.insert(build_target(r.verb, r.adverb, vocab, table, mode)?);
            }
        }
        Ok(Self {
            vocab_digest: vocab.digest(),
            table_digest: table.digest(),
            mode,
            targets,
        })
    }

    pub fn get(&self, verb: usize, adverb: usize) -> Option<&RegressionTarget> {
        self.targets.get(&(verb, adverb))
    }

    pub fn matches(&self, vocab: &Vocab, table: &EmbeddingTable, mode: TargetMode) -> bool {
        self.mode == mode && self.vocab_digest == vocab.digest() && self.table_digest == table.digest()
    }
}

/// `V x A` table of a geometric quantity; `None` where it could not be
/// computed for a pair absent from the corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometryMatrix {
    pub values: Vec<Vec<Option<f64>>>,
    pub present: Vec<Vec<bool>>,
}

impl GeometryMatrix {
    /// Values of pairs present in the corpus.
    pub fn present_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .flatten()
            .zip(self.present.iter().flatten())
            .filter_map(|(v, &p)| if p { *v } else { None })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub d: GeometryMatrix,
    pub delta: GeometryMatrix,
    /// Verb-adverb cosine per pair.
    pub cosine: Vec<Vec<Option<f64>>>,
    /// True when distances were taken against the bare-verb sentence.
    pub no_antonym: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryStats {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let xs: Vec<f64> = values.into_iter().collect();
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            count: xs.len(),
            mean,
            std: var.sqrt(),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeometrySummary {
    pub d: Option<SummaryStats>,
    pub delta: Option<SummaryStats>,
    /// Present pairs whose verb-adverb cosine is negative, i.e. whose
    /// target sign is inverted.
    pub negative_cosine_pairs: usize,
    pub present_pairs: usize,
}

/// `d` and `delta` over every verb-adverb pair.
///
/// `presence[v][a]` marks pairs occurring in the corpus; with `None`, every
/// pair is treated as present. Present pairs must resolve; absent pairs are
/// computed when their embeddings exist and left empty otherwise.
pub fn geometry_export(vocab: &Vocab, table: &EmbeddingTable, presence: Option<&[Vec<bool>]>) -> Result<Geometry> {
    let (nv, na) = (vocab.num_verbs(), vocab.num_adverbs());
    let present: Vec<Vec<bool>> = match presence {
        Some(p) => p.to_vec(),
        None => vec![vec![true; na]; nv],
    };
    let no_antonym = !vocab.has_antonyms();
    let mut d = vec![vec![None; na]; nv];
    let mut dl = vec![vec![None; na]; nv];
    let mut cos = vec![vec![None; na]; nv];
    for v in 0..nv {
        for a in 0..na {
            let cell = (|| -> Result<(f64, f64)> {
                let c = verb_adverb_cosine(table, vocab, v, a)?;
                let dist = if no_antonym {
                    let verb = &vocab.verbs()[v];
                    euclidean(
                        &table.get_f64(&phrase_key(verb, &vocab.adverbs()[a]))?,
                        &table.get_f64(&verb_sentence_key(verb))?,
                    )
                } else {
                    distance_d(table, vocab, v, a)?
                };
                Ok((dist, c))
            })();
            match cell {
                Ok((dist, c)) => {
                    d[v][a] = Some(dist);
                    dl[v][a] = Some(dist * c);
                    cos[v][a] = Some(c);
                }
                Err(e) if present[v][a] => return Err(e),
                Err(_) => {}
            }
        }
    }
    Ok(Geometry {
        d: GeometryMatrix {
            values: d,
            present: present.clone(),
        },
        delta: GeometryMatrix { values: dl, present },
        cosine: cos,
        no_antonym,
    })
}

impl Geometry {
    pub fn summary(&self) -> GeometrySummary {
        let negative_cosine_pairs = self
            .cosine
            .iter()
            .flatten()
            .zip(self.d.present.iter().flatten())
            .filter(|(c, &p)| p && c.is_some_and(|c| c < 0.0))
            .count();
        GeometrySummary {
            d: SummaryStats::of(self.d.present_values()),
            delta: SummaryStats::of(self.delta.present_values()),
            negative_cosine_pairs,
            present_pairs: self.d.present.iter().flatten().filter(|&&p| p).count(),
        }
    }

    /// CSV rows `verb,adverb,d,delta,present` for every computed pair.
    pub fn write_csv(&self, vocab: &Vocab, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["verb", "adverb", "d", "delta", "present"])?;
        for (v, verb) in vocab.verbs().iter().enumerate() {
            for (a, adverb) in vocab.adverbs().iter().enumerate() {
                if let (Some(d), Some(dl)) = (self.d.values[v][a], self.delta.values[v][a]) {
                    w.write_record([
                        verb.as_str(),
                        adverb.as_str(),
                        &format!("{d:.9}"),
                        &format!("{dl:.9}"),
                        if self.d.present[v][a] { "1" } else { "0" },
                    ])?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::new(
            vec!["chop".into()],
            ["finely", "coarsely", "slowly", "quickly"].map(String::from).to_vec(),
            Some(&[(0, 1), (2, 3)]),
        )
        .unwrap()
    }

    /// g(s) = (1,0,0), g(s~) = (0,1,0), g(v) = (1,0,0), g(a) = (0.6,0.8,0).
    fn table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(3);
        t.insert("sent:chop finely", vec![1., 0., 0.]).unwrap();
        t.insert("sent:chop coarsely", vec![0., 1., 0.]).unwrap();
        t.insert("verb:chop", vec![1., 0., 0.]).unwrap();
        t.insert("adverb:finely", vec![0.6, 0.8, 0.]).unwrap();
        t.insert("adverb:coarsely", vec![0.6, 0.8, 0.]).unwrap();
        t
    }

    #[test]
    fn distance_identical_sentences_is_zero() {
        let mut t = table();
        t.insert("sent:chop coarsely", vec![1., 0., 0.]).unwrap();
        assert_eq!(distance_d(&t, &vocab(), 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn distance_hand_computed() {
        let d = distance_d(&table(), &vocab(), 0, 0).unwrap();
        assert!((d - std::f64::consts::SQRT_2).abs() < 1e-6);
        assert_eq!(d, distance_d(&table(), &vocab(), 0, 1).unwrap());
    }

    #[test]
    fn delta_hand_computed() {
        let dl = delta(&table(), &vocab(), 0, 0).unwrap();
        assert!((dl - 0.848528).abs() < 1e-6, "{dl}");
    }

    #[test]
    fn delta_orthogonal_is_zero() {
        let mut t = table();
        t.insert("adverb:finely", vec![0., 0., 2.]).unwrap();
        assert_eq!(delta(&t, &vocab(), 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn delta_sign_follows_cosine() {
        let mut t = table();
        t.insert("adverb:finely", vec![-0.6, -0.8, 0.]).unwrap();
        let dl = delta(&t, &vocab(), 0, 0).unwrap();
        assert!((dl + 0.848528).abs() < 1e-6);
    }

    #[test]
    fn delta_zero_norm_is_degenerate() {
        let mut t = table();
        t.insert("verb:chop", vec![0., 0., 0.]).unwrap();
        assert!(matches!(delta(&t, &vocab(), 0, 0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn missing_key_named() {
        let err = distance_d(&table(), &vocab(), 0, 2).unwrap_err();
        assert!(matches!(err, Error::MissingKey(k) if k == "sent:chop slowly"));
    }

    #[test]
    fn no_antonym_hand_computed() {
        let v = Vocab::new(vec!["v".into()], vec!["a".into()], None).unwrap();
        let mut t = EmbeddingTable::new(2);
        t.insert("sent:v a", vec![0., 1.]).unwrap();
        t.insert("sent:v", vec![1., 0.]).unwrap();
        t.insert("verb:v", vec![1., 0.]).unwrap();
        t.insert("adverb:a", vec![1., 0.]).unwrap();
        let dl = delta_no_antonym(&t, &v, 0, 0).unwrap();
        assert!((dl - 2f64.sqrt()).abs() < 1e-12);
        t.insert("sent:v a", vec![1., 0.]).unwrap();
        assert_eq!(delta_no_antonym(&t, &v, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn target_antonym_mode() {
        let y = build_target(0, 0, &vocab(), &table(), TargetMode::Antonym).unwrap();
        let expected = [0.848528, -0.848528, 0.0, 0.0];
        for (got, want) in y.values.iter().zip(expected) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn target_fixed_mode_ignores_table() {
        let empty = EmbeddingTable::new(3);
        let y = build_target(0, 0, &vocab(), &empty, TargetMode::Fixed).unwrap();
        assert_eq!(y.values, vec![1.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn target_no_antonym_mode() {
        let mut t = EmbeddingTable::new(2);
        // |g(s) - g(v)| = 0.3, cos = 1.
        t.insert("sent:chop finely", vec![1.3, 0.]).unwrap();
        t.insert("sent:chop", vec![1.0, 0.]).unwrap();
        t.insert("verb:chop", vec![1.0, 0.]).unwrap();
        t.insert("adverb:finely", vec![2.0, 0.]).unwrap();
        let y = build_target(0, 0, &vocab(), &t, TargetMode::NoAntonym).unwrap();
        assert!((y.values[0] - 0.3).abs() < 1e-6);
        assert_eq!(&y.values[1..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn antonym_mode_needs_map() {
        let v = Vocab::new(vec!["chop".into()], vec!["finely".into()], None).unwrap();
        assert!(build_target(0, 0, &v, &table(), TargetMode::Antonym).is_err());
    }

    #[test]
    fn single_pair_geometry() {
        let v = Vocab::new(
            vec!["chop".into()],
            vec!["finely".into(), "coarsely".into()],
            Some(&[(0, 1)]),
        )
        .unwrap();
        let g = geometry_export(&v, &table(), None).unwrap();
        assert_eq!(g.d.values[0][0], Some(distance_d(&table(), &v, 0, 0).unwrap()));
        assert_eq!(g.delta.values[0][0], Some(delta(&table(), &v, 0, 0).unwrap()));
        let s = g.summary();
        assert_eq!(s.present_pairs, 2);
        assert_eq!(s.negative_cosine_pairs, 0);
    }

    #[test]
    fn geometry_skips_absent_unresolvable_pairs() {
        let presence = vec![vec![true, true, false, false]];
        let g = geometry_export(&vocab(), &table(), Some(&presence)).unwrap();
        assert_eq!(g.d.values[0][2], None);
        assert!(geometry_export(&vocab(), &table(), None).is_err());
    }

    #[test]
    fn target_table_caches_pairs() {
        let r = VideoRecord {
            id: "x".into(),
            verb: 0,
            adverb: 1,
            split: crate::corpus::Split::Train,
            t: 1,
        };
        let tt = TargetTable::build(&vocab(), &table(), TargetMode::Antonym, &[r.clone(), r]).unwrap();
        assert!(tt.get(0, 1).is_some());
        assert!(tt.get(0, 0).is_none());
        assert!(tt.matches(&vocab(), &table(), TargetMode::Antonym));
        assert!(!tt.matches(&vocab(), &table(), TargetMode::Fixed));
    }
}

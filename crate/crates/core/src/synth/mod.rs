//! Synthetic corpora with a known, learnable structure, and brute-force
//! oracles used to cross-check the metric and geometry code.
//!
//! Every `(verb, adverb)` pair owns a hidden prototype in segment space. A
//! video carries that prototype (plus Gaussian noise) in a fraction of its
//! segments and pure noise in the rest, so a model has to attend to the
//! right segments to recover the label.

pub mod oracle;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, FeatureSequence, FeatureStore, Split, VideoRecord, Vocab, EMBEDDINGS_FILE};
use crate::error::{Error, Result};
use crate::ndnum::{Array, Rng, Stream};
use crate::textgeo::{adverb_key, phrase_key, verb_key, verb_sentence_key, EmbeddingTable};

/// Minimum verb-adverb cosine in generated text embeddings.
pub const MIN_VERB_ADVERB_COSINE: f64 = 0.1;
const PHRASE_NOISE: f64 = 0.01;
const MAX_RESAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub verbs: usize,
    pub adverbs: usize,
    /// Pair adverbs `(0,1), (2,3), ...` as antonyms.
    pub antonyms: bool,
    pub t_min: usize,
    pub t_max: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction of each video's segments that carry the prototype.
    pub signal_fraction: f64,
    pub noise_sigma: f64,
    pub d_seg: usize,
    pub d_pool: usize,
    pub d_text: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            verbs: 8,
            adverbs: 6,
            antonyms: true,
            t_min: 8,
            t_max: 20,
            n_train: 2000,
            n_test: 500,
            signal_fraction: 0.5,
            noise_sigma: 0.3,
            d_seg: 64,
            d_pool: 32,
            d_text: 32,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synth spec: {m}")));
        if self.verbs == 0 || self.adverbs < 2 {
            return fail("need at least 1 verb and 2 adverbs");
        }
        if self.antonyms && !self.adverbs.is_multiple_of(2) {
            return fail("antonym pairing needs an even adverb count");
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return fail("T range must satisfy 1 <= t_min <= t_max");
        }
        if !(self.signal_fraction > 0.0 && self.signal_fraction <= 1.0) {
            return fail("signal_fraction must be in (0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return fail("noise_sigma must be finite and non-negative");
        }
        if self.d_seg < 2 || self.d_pool < 2 || self.d_text < 2 {
            return fail("dims must be at least 2");
        }
        Ok(())
    }

    fn vocab(&self) -> Result<Vocab> {
        let verbs = (0..self.verbs).map(|i| format!("verb{i:02}")).collect();
        let adverbs = (0..self.adverbs).map(|i| format!("adverb{i:02}")).collect();
        let pairs: Vec<(usize, usize)> = (0..self.adverbs / 2).map(|i| (2 * i, 2 * i + 1)).collect();
        Vocab::new(verbs, adverbs, self.antonyms.then_some(pairs.as_slice()))
    }
}

/// A generated corpus plus its text embeddings and hidden prototypes.
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub table: EmbeddingTable,
    /// `prototypes[v][a]`, length `d_seg`.
    pub prototypes: Vec<Vec<Vec<f32>>>,
}

impl SynthCorpus {
    /// Writes the corpus files and `text_embeddings.jsonl` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        self.corpus.write_dir(dir)?;
        self.table.write(&dir.join(EMBEDDINGS_FILE))
    }
}

fn unit(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

fn text_table(spec: &SynthSpec, vocab: &Vocab) -> Result<EmbeddingTable> {
    let mut rng = Rng::with_index(spec.seed, Stream::Synth, 0);
    let dim = spec.d_text;
    let common = unit(&mut rng, dim);
    let around_common = |rng: &mut Rng| {
        let r = unit(rng, dim);
        normalized(common.iter().zip(&r).map(|(c, x)| c + x).collect())
    };
    let gv: Vec<Vec<f64>> = (0..spec.verbs).map(|_| around_common(&mut rng)).collect();
    let mut ga = Vec::with_capacity(spec.adverbs);
    for a in 0..spec.adverbs {
        let mut tries = 0;
        let g = loop {
            let g = around_common(&mut rng);
            if gv.iter().all(|v| dot(v, &g) >= MIN_VERB_ADVERB_COSINE) {
                break g;
            }
            tries += 1;
            if tries == MAX_RESAMPLES {
                return Err(Error::Degenerate(format!("adverb {a}: cosine constraint not met")));
            }
        };
        ga.push(g);
    }

    let eps = PHRASE_NOISE / (dim as f64).sqrt();
    let mut table = EmbeddingTable::new(dim);
    for (v, verb) in vocab.verbs().iter().enumerate() {
        table.insert(verb_key(verb), to_f32(&gv[v]))?;
        let bare: Vec<f64> = gv[v].iter().map(|x| x + eps * rng.normal()).collect();
        table.insert(verb_sentence_key(verb), to_f32(&bare))?;
        for (a, adverb) in vocab.adverbs().iter().enumerate() {
            let s = normalized(
                gv[v]
                    .iter()
                    .zip(&ga[a])
                    .map(|(x, y)| x + 0.5 * y + eps * rng.normal())
                    .collect(),
            );
            table.insert(phrase_key(verb, adverb), to_f32(&s))?;
        }
    }
    for (a, adverb) in vocab.adverbs().iter().enumerate() {
        table.insert(adverb_key(adverb), to_f32(&ga[a]))?;
    }
    Ok(table)
}

fn prototypes(spec: &SynthSpec) -> Vec<Vec<Vec<f64>>> {
    let mut rng = Rng::with_index(spec.seed, Stream::Synth, 1);
    let d = spec.d_seg;
    let adverb_dirs: Vec<Vec<f64>> = (0..spec.adverbs).map(|_| unit(&mut rng, d)).collect();
    let verb_dirs: Vec<Vec<f64>> = (0..spec.verbs).map(|_| unit(&mut rng, d)).collect();
    let scale = (d as f64).sqrt();
    verb_dirs
        .iter()
        .map(|vd| {
            adverb_dirs
                .iter()
                .map(|ad| {
                    let jitter = unit(&mut rng, d);
                    let p = (0..d).map(|i| ad[i] + 0.5 * vd[i] + 0.25 * jitter[i]).collect();
                    normalized(p).into_iter().map(|x| x * scale).collect()
                })
                .collect()
        })
        .collect()
}

/// Labels cycling over every pair, then shuffled, so pair counts differ by
/// at most one.
fn balanced_labels(spec: &SynthSpec, n: usize, index: u64) -> Vec<(usize, usize)> {
    let pairs = spec.verbs * spec.adverbs;
    let mut labels: Vec<(usize, usize)> = (0..n).map(|i| (i % pairs / spec.adverbs, i % spec.adverbs)).collect();
    Rng::with_index(spec.seed, Stream::Synth, index).shuffle(&mut labels);
    labels
}

pub fn gen_corpus(spec: &SynthSpec) -> Result<SynthCorpus> {
    spec.validate()?;
    let vocab = spec.vocab()?;
    let table = text_table(spec, &vocab)?;
    let protos = prototypes(spec);

    let mut proj_rng = Rng::with_index(spec.seed, Stream::Synth, 2);
    let projection: Vec<Vec<f64>> = (0..spec.d_pool)
        .map(|_| (0..spec.d_seg).map(|_| proj_rng.normal()).collect())
        .collect();

    let mut labelled: Vec<(Split, String, (usize, usize))> = Vec::new();
    for (i, l) in balanced_labels(spec, spec.n_train, 3).into_iter().enumerate() {
        labelled.push((Split::Train, format!("train{i:05}"), l));
    }
    for (i, l) in balanced_labels(spec, spec.n_test, 4).into_iter().enumerate() {
        labelled.push((Split::Test, format!("test{i:05}"), l));
    }

    let mut store = FeatureStore::new(spec.d_seg, spec.d_pool);
    let mut records = Vec::with_capacity(labelled.len());
    for (j, (split, id, (v, a))) in labelled.into_iter().enumerate() {
        let mut rng = Rng::with_index(spec.seed, Stream::Synth, 1000 + j as u64);
        let t = rng.int_inclusive(spec.t_min, spec.t_max);
        let n_signal = ((spec.signal_fraction * t as f64).ceil() as usize).clamp(1, t);
        let mut is_signal: Vec<bool> = (0..t).map(|i| i < n_signal).collect();
        rng.shuffle(&mut is_signal);
        let proto = &protos[v][a];
        let mut data = Vec::with_capacity(t * spec.d_seg);
        for &sig in &is_signal {
            for &p in proto {
                let x = if sig {
                    p + spec.noise_sigma * rng.normal()
                } else {
                    rng.normal()
                };
                data.push(x as f32);
            }
        }
        let pooled = normalized(projection.iter().map(|row| dot(row, proto)).collect());
        store.insert(
            id.clone(),
            FeatureSequence {
                segments: Array::matrix(t, spec.d_seg, data)?,
                pooled: to_f32(&pooled),
            },
        )?;
        records.push(VideoRecord {
            id,
            verb: v,
            adverb: a,
            split,
            t,
        });
    }
    Ok(SynthCorpus {
        corpus: Corpus::new(vocab, records, store)?,
        table,
        prototypes: protos
            .iter()
            .map(|row| row.iter().map(|p| to_f32(p)).collect())
            .collect(),
    })
}

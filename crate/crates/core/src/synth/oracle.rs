//! Slow reference implementations. They share no code with `eval` or
//! `textgeo` and exist only to cross-check them.

use crate::corpus::Vocab;
use crate::textgeo::EmbeddingTable;

/// Ranking built by repeated selection of the best remaining item (highest
/// score, lowest key on ties), then precision read off at every hit.
pub fn oracle_ap_keyed<K: Ord>(scores: &[f64], relevant: &[bool], keys: &[K]) -> Option<f64> {
    let n = scores.len();
    let mut taken = vec![false; n];
    let mut ranking = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) if scores[i] > scores[b] || (scores[i] == scores[b] && keys[i] < keys[b]) => Some(i),
                keep => keep,
            };
        }
        let b = best.unwrap();
        taken[b] = true;
        ranking.push(b);
    }
    let positives = relevant.iter().filter(|&&r| r).count();
    if positives == 0 {
        return None;
    }
    let mut precisions = Vec::new();
    for k in 1..=n {
        if relevant[ranking[k - 1]] {
            let hits_in_top_k = ranking[..k].iter().filter(|&&i| relevant[i]).count();
            precisions.push(hits_in_top_k as f64 / k as f64);
        }
    }
    Some(precisions.iter().sum::<f64>() / positives as f64)
}

/// Ties go to the lower position.
pub fn oracle_ap(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    let keys: Vec<usize> = (0..scores.len()).collect();
    oracle_ap_keyed(scores, relevant, &keys)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleMetrics {
    pub map_w: f64,
    pub map_m: f64,
    pub acc_a: Option<f64>,
}

/// Weighted and macro mAP plus antonym accuracy. `antonyms[a]` is the
/// partner of adverb `a`, if any.
pub fn oracle_metrics(
    ids: &[String],
    scores: &[Vec<f64>],
    gt: &[usize],
    num_adverbs: usize,
    antonyms: Option<&[usize]>,
) -> OracleMetrics {
    let mut aps = Vec::new();
    let mut supports = Vec::new();
    for a in 0..num_adverbs {
        let column: Vec<f64> = scores.iter().map(|row| row[a]).collect();
        let rel: Vec<bool> = gt.iter().map(|&g| g == a).collect();
        if let Some(ap) = oracle_ap_keyed(&column, &rel, ids) {
            aps.push(ap);
            supports.push(rel.iter().filter(|&&r| r).count() as f64);
        }
    }
    let (map_w, map_m) = if aps.is_empty() {
        (0.0, 0.0)
    } else {
        let total: f64 = supports.iter().sum();
        (
            aps.iter().zip(&supports).map(|(ap, s)| ap * s / total).sum(),
            aps.iter().sum::<f64>() / aps.len() as f64,
        )
    };
    let acc_a = antonyms.filter(|_| !gt.is_empty()).map(|h| {
        let wins = gt.iter().zip(scores).filter(|(&g, row)| row[g] > row[h[g]]).count();
        wins as f64 / gt.len() as f64
    });
    OracleMetrics { map_w, map_m, acc_a }
}

fn vec64(table: &EmbeddingTable, key: &str) -> Option<Vec<f64>> {
    table.get(key).ok().map(|v| v.iter().map(|&x| x as f64).collect())
}

/// `(d, delta)` as `V x A` matrices recomputed from raw keys; `None` where a
/// key is missing. Without an antonym map the bare-verb sentence stands in
/// for the antonym phrase.
#[allow(clippy::type_complexity)]
pub fn oracle_geometry(table: &EmbeddingTable, vocab: &Vocab) -> (Vec<Vec<Option<f64>>>, Vec<Vec<Option<f64>>>) {
    let nv = vocab.num_verbs();
    let na = vocab.num_adverbs();
    let mut d = vec![vec![None; na]; nv];
    let mut delta = vec![vec![None; na]; nv];
    for v in 0..nv {
        let verb = &vocab.verbs()[v];
        for a in 0..na {
            let adverb = &vocab.adverbs()[a];
            let pos = vec64(table, &format!("sent:{verb} {adverb}"));
            let other = match vocab.antonym(a) {
                Some(h) => vec64(table, &format!("sent:{verb} {}", vocab.adverbs()[h])),
                None => vec64(table, &format!("sent:{verb}")),
            };
            let gv = vec64(table, &format!("verb:{verb}"));
            let ga = vec64(table, &format!("adverb:{adverb}"));
            let (Some(pos), Some(other), Some(gv), Some(ga)) = (pos, other, gv, ga) else {
                continue;
            };
            let mut sq = 0.0;
            for k in 0..pos.len() {
                sq += (pos[k] - other[k]) * (pos[k] - other[k]);
            }
            let dist = sq.sqrt();
            let (mut vv, mut aa, mut va) = (0.0, 0.0, 0.0);
            for k in 0..gv.len() {
                vv += gv[k] * gv[k];
                aa += ga[k] * ga[k];
                va += gv[k] * ga[k];
            }
            d[v][a] = Some(dist);
            delta[v][a] = Some(dist * va / (vv.sqrt() * aa.sqrt()));
        }
    }
    (d, delta)
}

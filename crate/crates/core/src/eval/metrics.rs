use serde::{Deserialize, Serialize};

use crate::corpus::Vocab;
use crate::error::{Error, Result};

use super::{Protocol, ScoreMatrix};

/// Average precision of one ranking. Items are ordered by descending score,
/// ties by ascending position. `None` when nothing is relevant.
pub fn average_precision(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), relevant.len(), "scores and relevance differ in length");
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if relevant[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| total / hits as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub adverb: String,
    pub support: usize,
    pub ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub protocol: Protocol,
    pub num_videos: usize,
    pub map_w: f64,
    pub map_m: f64,
    /// Only defined when the vocabulary has antonym pairs.
    pub acc_a: Option<f64>,
    pub per_class: Vec<ClassMetrics>,
}

impl MetricsReport {
    pub fn get(&self, metric: &str) -> Option<f64> {
        match metric {
            "map_w" => Some(self.map_w),
            "map_m" => Some(self.map_m),
            "acc_a" => self.acc_a,
            _ => None,
        }
    }

    /// `(name, value)` for every defined metric.
    pub fn values(&self) -> Vec<(&'static str, f64)> {
        let mut v = vec![("map_w", self.map_w), ("map_m", self.map_m)];
        if let Some(a) = self.acc_a {
            v.push(("acc_a", a));
        }
        v
    }
}

/// Rows are ranked in ascending record-id order before ties are broken, so
/// results do not depend on the order of `scores`.
pub fn compute_metrics(scores: &ScoreMatrix, vocab: &Vocab) -> Result<MetricsReport> {
    let n = scores.len();
    let na = vocab.num_adverbs();
    if let Some(row) = scores.scores.iter().find(|r| r.len() != na) {
        return Err(Error::dim(
            "compute_metrics",
            format!("row of {} scores, {na} adverbs", row.len()),
        ));
    }
    if scores.scores.iter().flatten().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("compute_metrics"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| scores.ids[i].cmp(&scores.ids[j]));

    let mut per_class = Vec::with_capacity(na);
    let (mut weighted, mut support_total, mut macro_sum, mut macro_n) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..na {
        let col: Vec<f64> = order.iter().map(|&i| scores.scores[i][a]).collect();
        let rel: Vec<bool> = order.iter().map(|&i| scores.gt_adverbs[i] == a).collect();
        let support = rel.iter().filter(|&&r| r).count();
        let ap = average_precision(&col, &rel);
        if let Some(ap) = ap {
            weighted += support as f64 * ap;
            support_total += support;
            macro_sum += ap;
            macro_n += 1;
        }
        per_class.push(ClassMetrics {
            adverb: vocab.adverbs()[a].clone(),
            support,
            ap,
        });
    }

    let acc_a = if vocab.has_antonyms() && n > 0 {
        let mut correct = 0usize;
        for i in 0..n {
            let gt = scores.gt_adverbs[i];
            let anti = vocab
                .antonym(gt)
                .ok_or_else(|| Error::Contract(format!("adverb {gt} has no antonym")))?;
            if scores.scores[i][gt] > scores.scores[i][anti] {
                correct += 1;
            }
        }
        Some(correct as f64 / n as f64)
    } else {
        None
    };

    Ok(MetricsReport {
        protocol: scores.protocol,
        num_videos: n,
        map_w: if support_total > 0 {
            weighted / support_total as f64
        } else {
            0.0
        },
        map_m: if macro_n > 0 { macro_sum / macro_n as f64 } else { 0.0 },
        acc_a,
        per_class,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub metric: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub runs: usize,
    pub display: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub protocol: Protocol,
    pub rows: Vec<VarianceRow>,
}

/// Mean and spread of each metric over independent runs.
pub fn variance_report(reports: &[MetricsReport]) -> Result<VarianceReport> {
    if reports.len() < 2 {
        return Err(Error::Config(format!("need at least 2 runs, got {}", reports.len())));
    }
    let protocol = reports[0].protocol;
    if reports.iter().any(|r| r.protocol != protocol) {
        return Err(Error::Config("runs were evaluated under different protocols".into()));
    }
    let mut rows = Vec::new();
    for (metric, _) in reports[0].values() {
        let xs: Vec<f64> = reports
            .iter()
            .map(|r| {
                r.get(metric)
                    .ok_or_else(|| Error::Config(format!("{metric} missing in a run")))
            })
            .collect::<Result<_>>()?;
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        rows.push(VarianceRow {
            metric: metric.to_string(),
            mean,
            std,
            runs: xs.len(),
            display: format!("{mean:.3} ± {std:.3}"),
        });
    }
    Ok(VarianceReport { protocol, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab4() -> Vocab {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Vocab::new(s(&["v"]), s(&["a", "b", "c", "d"]), Some(&[(0, 1), (2, 3)])).unwrap()
    }

    fn matrix(rows: Vec<Vec<f64>>, gts: Vec<usize>) -> ScoreMatrix {
        ScoreMatrix {
            ids: (0..rows.len()).map(|i| format!("id{i:03}")).collect(),
            gt_verbs: vec![0; rows.len()],
            gt_adverbs: gts,
            scores: rows,
            protocol: Protocol::WithLabels,
        }
    }

    #[test]
    fn ap_known_values() {
        assert_eq!(
            average_precision(&[0.9, 0.8, 0.7], &[true, false, true]),
            Some((1.0 + 2.0 / 3.0) / 2.0)
        );
        assert_eq!(average_precision(&[0.1, 0.5], &[true, false]), Some(0.5));
        assert_eq!(average_precision(&[0.1, 0.5], &[false, false]), None);
    }

    #[test]
    fn ap_ties_favour_lower_index() {
        assert_eq!(average_precision(&[1.0, 1.0], &[true, false]), Some(1.0));
        assert_eq!(average_precision(&[1.0, 1.0], &[false, true]), Some(0.5));
    }

    #[test]
    fn perfect_scores_give_one() {
        let m = matrix(
            vec![
                vec![1.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.0, 1.0],
            ],
            vec![0, 1, 3],
        );
        let r = compute_metrics(&m, &vocab4()).unwrap();
        assert_eq!((r.map_w, r.map_m, r.acc_a), (1.0, 1.0, Some(1.0)));
        assert_eq!(r.per_class[2].ap, None);
        assert_eq!(r.per_class[2].support, 0);
    }

    #[test]
    fn acc_ties_are_wrong() {
        let m = matrix(vec![vec![0.5, 0.5, 0.0, 0.0], vec![0.0, 0.0, 0.2, 0.1]], vec![0, 2]);
        assert_eq!(compute_metrics(&m, &vocab4()).unwrap().acc_a, Some(0.5));
    }

    #[test]
    fn weighted_vs_macro() {
        // a: positives at ranks 1 and 3. b: single positive at rank 1.
        let m = matrix(
            vec![
                vec![0.9, 0.0, 0.0, 0.0],
                vec![0.5, 0.4, 0.0, 0.0],
                vec![0.1, 0.1, 0.0, 0.0],
            ],
            vec![0, 1, 0],
        );
        let r = compute_metrics(&m, &vocab4()).unwrap();
        let (ap_a, ap_b) = (5.0 / 6.0, 1.0);
        assert!((r.per_class[0].ap.unwrap() - ap_a).abs() < 1e-12);
        assert!((r.per_class[1].ap.unwrap() - ap_b).abs() < 1e-12);
        assert!((r.map_w - (2.0 * ap_a + ap_b) / 3.0).abs() < 1e-12);
        assert!((r.map_m - (ap_a + ap_b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn no_antonyms_no_acc() {
        let s = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        let v = Vocab::new(s(&["v"]), s(&["a", "b"]), None).unwrap();
        let m = matrix(vec![vec![1.0, 0.0]], vec![0]);
        assert_eq!(compute_metrics(&m, &v).unwrap().acc_a, None);
    }

    #[test]
    fn wrong_width_rejected() {
        let m = matrix(vec![vec![1.0, 0.0]], vec![0]);
        assert!(compute_metrics(&m, &vocab4()).is_err());
    }

    #[test]
    fn variance_uses_population_std() {
        let mk = |x: f64| MetricsReport {
            protocol: Protocol::WithLabels,
            num_videos: 1,
            map_w: x,
            map_m: x,
            acc_a: Some(x),
            per_class: vec![],
        };
        let v = variance_report(&[mk(0.6), mk(0.7)]).unwrap();
        assert_eq!(v.rows.len(), 3);
        assert!((v.rows[0].mean - 0.65).abs() < 1e-12);
        assert!((v.rows[0].std - 0.05).abs() < 1e-12);
        assert_eq!(v.rows[0].display, "0.650 ± 0.050");
        assert!(variance_report(&[mk(0.5)]).is_err());
    }

    /// Average precision by counting, for each positive, how many items
    /// outrank it.
    fn ap_by_counting(scores: &[f64], rel: &[bool]) -> Option<f64> {
        let before = |i: usize, j: usize| scores[j] > scores[i] || (scores[j] == scores[i] && j < i);
        let pos: Vec<usize> = (0..scores.len()).filter(|&i| rel[i]).collect();
        if pos.is_empty() {
            return None;
        }
        let mut s = 0.0;
        for &i in &pos {
            let rank = 1 + (0..scores.len()).filter(|&j| before(i, j)).count();
            let hits = 1 + pos.iter().filter(|&&j| before(i, j)).count();
            s += hits as f64 / rank as f64;
        }
        Some(s / pos.len() as f64)
    }

    proptest! {
        #[test]
        fn ap_matches_counting(items in prop::collection::vec((0u8..5, any::<bool>()), 1..40)) {
            let scores: Vec<f64> = items.iter().map(|&(s, _)| s as f64).collect();
            let rel: Vec<bool> = items.iter().map(|&(_, r)| r).collect();
            let a = average_precision(&scores, &rel);
            let b = ap_by_counting(&scores, &rel);
            match (a, b) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
                (x, y) => prop_assert_eq!(x, y),
            }
            if let Some(x) = a {
                prop_assert!(x > 0.0 && x <= 1.0);
            }
        }

        #[test]
        fn metrics_invariant_to_row_order(
            rows in prop::collection::vec((prop::collection::vec(-3i8..3, 4), 0usize..4), 1..25),
            seed in any::<u64>(),
        ) {
            let m = matrix(
                rows.iter().map(|(s, _)| s.iter().map(|&x| x as f64).collect()).collect(),
                rows.iter().map(|&(_, g)| g).collect(),
            );
            let mut shuffled = m.clone();
            let mut perm: Vec<usize> = (0..m.len()).collect();
            crate::ndnum::Rng::new(seed, crate::ndnum::Stream::Test).shuffle(&mut perm);
            shuffled.ids = perm.iter().map(|&i| m.ids[i].clone()).collect();
            shuffled.gt_adverbs = perm.iter().map(|&i| m.gt_adverbs[i]).collect();
            shuffled.scores = perm.iter().map(|&i| m.scores[i].clone()).collect();
            let v = vocab4();
            prop_assert_eq!(compute_metrics(&m, &v).unwrap(), compute_metrics(&shuffled, &v).unwrap());
        }
    }
}

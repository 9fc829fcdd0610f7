//! Accuracy, ROC curve and AUC over labelled probability scores.
//!
//! A sample counts as predicted positive when its score is strictly above the
//! threshold. AUC gives half credit to tied positive/negative pairs, which is
//! what the trapezoidal area under the strict-threshold ROC curve computes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty score set")]
    Empty,
    #[error("both labels are required, only label {0} present")]
    SingleClass(u8),
    #[error("{id}: label must be 0 or 1, got {label}")]
    Label { id: String, label: u8 },
    #[error("{id}: score {score} outside [0, 1]")]
    Score { id: String, score: f64 },
    #[error("{0} labels for {1} scores")]
    Length(usize, usize),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("score file: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub id: String,
    pub label: u8,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new(entries: Vec<ScoreEntry>) -> Result<Self> {
        for e in &entries {
            if e.label > 1 {
                return Err(MetricsError::Label {
                    id: e.id.clone(),
                    label: e.label,
                });
            }
            if !(0.0..=1.0).contains(&e.score) {
                return Err(MetricsError::Score {
                    id: e.id.clone(),
                    score: e.score,
                });
            }
        }
        Ok(Self { entries })
    }

    /// Builds a set with ids `0..n`.
    pub fn from_pairs(labels: &[u8], scores: &[f64]) -> Result<Self> {
        if labels.len() != scores.len() {
            return Err(MetricsError::Length(labels.len(), scores.len()));
        }
        Self::new(
            labels
                .iter()
                .zip(scores)
                .enumerate()
                .map(|(i, (&label, &score))| ScoreEntry {
                    id: i.to_string(),
                    label,
                    score,
                })
                .collect(),
        )
    }

    pub fn entries(&self) -> &[ScoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.entries.iter().map(|e| e.label).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.score).collect()
    }

    /// Counts of (negatives, positives).
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.entries.iter().filter(|e| e.label == 1).count();
        (self.entries.len() - pos, pos)
    }

    fn require_both(&self) -> Result<()> {
        match self.class_counts() {
            (0, 0) => Err(MetricsError::Empty),
            (0, _) => Err(MetricsError::SingleClass(1)),
            (_, 0) => Err(MetricsError::SingleClass(0)),
            _ => Ok(()),
        }
    }

    /// Writes `id,label,score`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let entries = r.deserialize().collect::<std::result::Result<Vec<ScoreEntry>, _>>()?;
        let mut ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(MetricsError::DuplicateId(w[0].to_string()));
        }
        Self::new(entries)
    }
}

/// Fraction of samples where `score > threshold` agrees with `label == 1`.
pub fn accuracy(scores: &ScoreSet, threshold: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    let correct = scores
        .entries
        .iter()
        .filter(|e| (e.score > threshold) == (e.label == 1))
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    /// Threshold for each point: unique scores in descending order, then `-inf`.
    pub thresholds: Vec<f64>,
}

impl RocCurve {
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

pub fn roc_curve(scores: &ScoreSet) -> Result<RocCurve> {
    scores.require_both()?;
    let (neg, pos) = scores.class_counts();
    let mut sorted: Vec<&ScoreEntry> = scores.entries.iter().collect();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut points = Vec::new();
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let theta = sorted[i].score;
        // samples strictly above theta have already been counted
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(theta);
        while i < sorted.len() && sorted[i].score == theta {
            if sorted[i].label == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    points.push((1.0, 1.0));
    thresholds.push(f64::NEG_INFINITY);
    Ok(RocCurve { points, thresholds })
}

/// Samples sorted by score with tie groups, reusable across reweightings.
#[derive(Debug, Clone)]
pub(crate) struct RankedScores {
    /// Original indices in ascending score order.
    order: Vec<usize>,
    /// Start offsets into `order` of each tie group, plus a final `len`.
    groups: Vec<usize>,
    labels: Vec<u8>,
}

impl RankedScores {
    pub(crate) fn new(labels: &[u8], scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let mut groups = vec![0];
        for k in 1..order.len() {
            if scores[order[k]] != scores[order[k - 1]] {
                groups.push(k);
            }
        }
        groups.push(order.len());
        Self {
            order,
            groups,
            labels: labels.to_vec(),
        }
    }

    /// `(2·concordant + tied, 2·|P|·|N|)` where sample `i` appears `counts[i]` times.
    pub(crate) fn pair_counts(&self, counts: impl Fn(usize) -> u64) -> (u128, u128) {
        let (mut neg_below, mut num) = (0u128, 0u128);
        let mut pos_total = 0u128;
        for g in self.groups.windows(2) {
            let (mut p, mut n) = (0u128, 0u128);
            for &idx in &self.order[g[0]..g[1]] {
                let c = u128::from(counts(idx));
                if self.labels[idx] == 1 {
                    p += c;
                } else {
                    n += c;
                }
            }
            num += 2 * p * neg_below + p * n;
            neg_below += n;
            pos_total += p;
        }
        (num, 2 * pos_total * neg_below)
    }
}

/// Area under the ROC curve, with ties half-credited.
pub fn auc(scores: &ScoreSet) -> Result<f64> {
    scores.require_both()?;
    let ranked = RankedScores::new(&scores.labels(), &scores.scores());
    let (num, den) = ranked.pair_counts(|_| 1);
    Ok(num as f64 / den as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(labels: &[u8], scores: &[f64]) -> ScoreSet {
        ScoreSet::from_pairs(labels, scores).unwrap()
    }

    /// Pairwise concordance count as an unreduced rational `(2c + t, 2PN)`.
    fn oracle(labels: &[u8], scores: &[f64]) -> (u128, u128) {
        let (mut num, mut pairs) = (0u128, 0u128);
        for (i, &yi) in labels.iter().enumerate() {
            if yi != 1 {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj != 0 {
                    continue;
                }
                pairs += 1;
                if scores[i] > scores[j] {
                    num += 2;
                } else if scores[i] == scores[j] {
                    num += 1;
                }
            }
        }
        (num, 2 * pairs)
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&set(&[1, 1], &[1.0, 1.0]), 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&set(&[1, 0], &[0.9, 0.1]), 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&set(&[1, 0, 0, 1], &[0.9, 0.8, 0.2, 0.4]), 0.5).unwrap(), 0.5);
        assert_eq!(accuracy(&set(&[0], &[0.5]), 0.5).unwrap(), 1.0);
        assert!(matches!(accuracy(&ScoreSet::default(), 0.5), Err(MetricsError::Empty)));
    }

    #[test]
    fn roc_examples() {
        let roc = roc_curve(&set(&[1, 0, 1, 0], &[0.9, 0.8, 0.7, 0.1])).unwrap();
        assert_eq!(
            roc.points,
            vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        );
        assert_eq!(roc.thresholds.len(), roc.points.len());
        let flat = roc_curve(&set(&[1, 0, 1], &[0.3, 0.3, 0.3])).unwrap();
        assert_eq!(flat.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        let perfect = roc_curve(&set(&[1, 1, 0], &[0.9, 0.8, 0.2])).unwrap();
        assert!(perfect.points.contains(&(0.0, 1.0)));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&set(&[1, 0, 1, 0], &[0.9, 0.8, 0.7, 0.1])).unwrap(), 0.75);
        assert_eq!(auc(&set(&[1, 0, 1, 0], &[0.4; 4])).unwrap(), 0.5);
        assert_eq!(auc(&set(&[0, 0, 1], &[0.1, 0.2, 0.3])).unwrap(), 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(auc(&set(&[1, 1], &[0.2, 0.3])), Err(MetricsError::SingleClass(1))));
        assert!(matches!(roc_curve(&set(&[0], &[0.2])), Err(MetricsError::SingleClass(0))));
        assert!(ScoreSet::from_pairs(&[2], &[0.5]).is_err());
        assert!(ScoreSet::from_pairs(&[1], &[1.5]).is_err());
    }

    #[test]
    fn score_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let s = set(&[1, 0, 1], &[0.1 + 0.2, 1.0 / 3.0, 0.0]);
        s.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,label,score\n"));
        assert_eq!(ScoreSet::read_csv(&path).unwrap(), s);
    }

    fn scored() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
        (2usize..120).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..2, n),
                // coarse grid so ties are frequent
                proptest::collection::vec((0u32..20).prop_map(|k| f64::from(k) / 19.0), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_equals_pairwise_oracle((labels, scores) in scored()) {
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let s = set(&labels, &scores);
            let (num, den) = oracle(&labels, &scores);
            prop_assert_eq!(auc(&s).unwrap(), num as f64 / den as f64);
            let area = roc_curve(&s).unwrap().area();
            prop_assert!((area - auc(&s).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn auc_invariant_under_cubing((labels, scores) in scored()) {
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let cubed: Vec<f64> = scores.iter().map(|s| s * s * s).collect();
            prop_assert_eq!(auc(&set(&labels, &scores)).unwrap(), auc(&set(&labels, &cubed)).unwrap());
        }

        #[test]
        fn label_flip_complements((labels, scores) in scored()) {
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let flipped: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
            let a = auc(&set(&labels, &scores)).unwrap();
            let b = auc(&set(&flipped, &scores)).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn roc_is_monotone((labels, scores) in scored()) {
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let roc = roc_curve(&set(&labels, &scores)).unwrap();
            prop_assert_eq!(roc.points.first(), Some(&(0.0, 0.0)));
            prop_assert_eq!(roc.points.last(), Some(&(1.0, 1.0)));
            for w in roc.points.windows(2) {
                prop_assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
            }
            for w in roc.thresholds.windows(2) {
                prop_assert!(w[1] < w[0]);
            }
        }
    }
}

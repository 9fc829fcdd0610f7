use std::fmt::Write as _;

use crate::loss::{balanced_loss, bce_loss, LossKind};

use super::{Result, TrainError};

/// Class-stratified histogram of predicted probabilities over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeliefHistogram {
    pub epoch: usize,
    pub class0_bins: Vec<usize>,
    pub class1_bins: Vec<usize>,
}

impl BeliefHistogram {
    pub fn new(epoch: usize, probs: &[f64], labels: &[u8], n_bins: usize) -> Self {
        let n_bins = n_bins.max(1);
        let mut h = Self {
            epoch,
            class0_bins: vec![0; n_bins],
            class1_bins: vec![0; n_bins],
        };
        for (&p, &y) in probs.iter().zip(labels) {
            let bin = ((p.clamp(0.0, 1.0) * n_bins as f64) as usize).min(n_bins - 1);
            if y == 1 {
                h.class1_bins[bin] += 1;
            } else {
                h.class0_bins[bin] += 1;
            }
        }
        h
    }

    pub fn n_bins(&self) -> usize {
        self.class0_bins.len()
    }

    /// Fraction of class-0 mass in the lowest decile plus class-1 mass in the
    /// highest decile, over all samples.
    pub fn outer_decile_fraction(&self) -> f64 {
        let n = self.n_bins() as f64;
        let mut hit = 0usize;
        let mut total = 0usize;
        for k in 0..self.n_bins() {
            let (lo, hi) = (k as f64 / n, (k + 1) as f64 / n);
            total += self.class0_bins[k] + self.class1_bins[k];
            if hi <= 0.1 + 1e-12 {
                hit += self.class0_bins[k];
            }
            if lo >= 0.9 - 1e-12 {
                hit += self.class1_bins[k];
            }
        }
        if total == 0 {
            0.0
        } else {
            hit as f64 / total as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let n = self.n_bins() as f64;
        let mut out = String::from("bin_lo,bin_hi,class0,class1\n");
        for k in 0..self.n_bins() {
            writeln!(
                out,
                "{},{},{},{}",
                k as f64 / n,
                (k + 1) as f64 / n,
                self.class0_bins[k],
                self.class1_bins[k]
            )
            .expect("string write");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRow {
    pub confidence: f64,
    pub mean_bce: f64,
    pub mean_balanced: f64,
}

/// Mean BCE and mean balanced loss when a fraction `error_rate` of beliefs sit
/// at `1 - c` on the wrong side and the rest at `c` on the right side.
pub fn bce_increase_probe(error_rate: f64, confidences: &[f64]) -> Result<Vec<ProbeRow>> {
    if !(0.0..=1.0).contains(&error_rate) {
        return Err(TrainError::Config(format!("error rate {error_rate} outside [0, 1]")));
    }
    let unit = LossKind::default();
    confidences
        .iter()
        .map(|&c| {
            if !(0.0..=1.0).contains(&c) {
                return Err(TrainError::Config(format!("confidence {c} outside [0, 1]")));
            }
            let right = bce_loss(c, 1, &unit)?;
            let wrong = bce_loss(1.0 - c, 1, &unit)?;
            let right_b = balanced_loss(c, 1)?;
            let wrong_b = balanced_loss(1.0 - c, 1)?;
            Ok(ProbeRow {
                confidence: c,
                mean_bce: (1.0 - error_rate) * right + error_rate * wrong,
                mean_balanced: (1.0 - error_rate) * right_b + error_rate * wrong_b,
            })
        })
        .collect()
}

pub fn probe_csv(rows: &[ProbeRow]) -> String {
    let mut out = String::from("confidence,mean_bce,mean_balanced\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.confidence, r.mean_bce, r.mean_balanced).expect("string write");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_form(r: f64, c: f64) -> f64 {
        (1.0 - r) * -c.ln() + r * -(1.0 - c).ln()
    }

    #[test]
    fn probe_matches_closed_form() {
        let rows = bce_increase_probe(0.1, &[0.6, 0.99, 0.999, 1.0]).unwrap();
        for (row, want) in rows.iter().zip([0.5514, 0.4696, 0.6917]) {
            assert!((row.mean_bce - want).abs() < 5e-4, "{row:?}");
            assert!((row.mean_bce - closed_form(0.1, row.confidence)).abs() < 1e-6);
        }
        assert!(rows[2].mean_bce > rows[1].mean_bce);
        assert!((rows[3].mean_balanced - 0.2).abs() < 1e-12);
        assert!(rows.iter().all(|r| r.mean_balanced <= 2.0));
    }

    #[test]
    fn no_errors_means_bce_keeps_falling() {
        let cs: Vec<f64> = (0..50).map(|k| 0.5 + 0.0099 * k as f64).collect();
        let rows = bce_increase_probe(0.0, &cs).unwrap();
        assert!(rows.windows(2).all(|w| w[1].mean_bce < w[0].mean_bce));
        assert!(bce_increase_probe(1.5, &cs).is_err());
    }

    #[test]
    fn histogram_bins_sum_to_class_counts() {
        let h = BeliefHistogram::new(3, &[0.5, 0.5, 0.05, 0.97, 1.0], &[0, 1, 0, 1, 1], 10);
        assert_eq!(h.class0_bins.iter().sum::<usize>(), 2);
        assert_eq!(h.class1_bins.iter().sum::<usize>(), 3);
        assert_eq!(h.class0_bins[5], 1);
        assert_eq!(h.class1_bins[9], 2);
        assert!((h.outer_decile_fraction() - 0.6).abs() < 1e-12);
        assert_eq!(h.to_csv().lines().count(), 11);
    }
}

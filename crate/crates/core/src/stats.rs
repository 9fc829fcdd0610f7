//! Percentile bootstrap for AUC and Benjamini–Hochberg adjustment.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::metrics::{self, MetricsError, RankedScores, ScoreSet};
use crate::seeds;

/// Attempts per replicate before it is skipped.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid bootstrap setting: {0}")]
    Config(String),
    #[error("p-value {0} outside (0, 1]")]
    PValue(f64),
    #[error("every bootstrap replicate was single-class")]
    AllSkipped,
}

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    pub b: usize,
    pub alpha: f64,
    pub seed: u64,
    pub mu_ref: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            b: 1000,
            alpha: 0.05,
            seed: 0,
            mu_ref: 0.5,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(StatsError::Config("B must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(StatsError::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapReport {
    pub estimate: f64,
    pub ci: (f64, f64),
    pub p_empir: f64,
    pub p_adj: Option<f64>,
    pub b: usize,
    pub alpha: f64,
    pub n: usize,
    /// Replicates with AUC at or below `mu_ref`.
    pub at_or_below_ref: usize,
    /// Single-class draws that were thrown away and redrawn.
    pub redraws: usize,
    /// Replicates abandoned after [`MAX_REDRAWS`] single-class draws.
    pub skipped: usize,
}

impl BootstrapReport {
    /// `p_empir` as printed: an upper bound when no replicate fell at or below the reference.
    pub fn p_display(&self) -> String {
        if self.at_or_below_ref == 0 {
            format!("<= {:.1e}", self.p_empir)
        } else {
            format!("{:.4}", self.p_empir)
        }
    }
}

/// Type-7 (linear interpolation) quantile of ascending `sorted`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile bootstrap of the AUC with a one-sided add-one p-value against `mu_ref`.
///
/// Replicate `r` draws from its own stream seeded by `(seed, r)`, so results do
/// not depend on evaluation order.
pub fn bootstrap_auc(scores: &ScoreSet, cfg: &BootstrapConfig) -> Result<BootstrapReport> {
    cfg.validate()?;
    let estimate = metrics::auc(scores)?;
    let labels = scores.labels();
    let n = labels.len();
    let ranked = RankedScores::new(&labels, &scores.scores());
    let mut counts = vec![0u64; n];
    let mut aucs = Vec::with_capacity(cfg.b);
    let (mut redraws, mut skipped) = (0, 0);
    for r in 0..cfg.b {
        let mut rng = seeds::rng(cfg.seed, &[r as u64]);
        let mut done = false;
        for _ in 0..MAX_REDRAWS {
            counts.fill(0);
            let mut pos = 0usize;
            for _ in 0..n {
                let i = rng.random_range(0..n);
                counts[i] += 1;
                pos += usize::from(labels[i]);
            }
            if pos == 0 || pos == n {
                redraws += 1;
                continue;
            }
            let (num, den) = ranked.pair_counts(|i| counts[i]);
            aucs.push(num as f64 / den as f64);
            done = true;
            break;
        }
        if !done {
            skipped += 1;
        }
    }
    if aucs.is_empty() {
        return Err(StatsError::AllSkipped);
    }
    let below = aucs.iter().filter(|&&a| a <= cfg.mu_ref).count();
    aucs.sort_by(f64::total_cmp);
    let ci = (
        quantile_sorted(&aucs, cfg.alpha / 2.0),
        quantile_sorted(&aucs, 1.0 - cfg.alpha / 2.0),
    );
    Ok(BootstrapReport {
        estimate,
        ci,
        p_empir: (1 + below) as f64 / (aucs.len() + 1) as f64,
        p_adj: None,
        b: cfg.b,
        alpha: cfg.alpha,
        n,
        at_or_below_ref: below,
        redraws,
        skipped,
    })
}

/// Step-up FDR adjustment: `adj₍ᵢ₎ = min(1, min_{j≥i} p₍ⱼ₎·m/j)`, returned in input order.
pub fn benjamini_hochberg(pvals: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = pvals.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(StatsError::PValue(bad));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut adj = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank0, &idx) in order.iter().enumerate().rev() {
        running = running.min(pvals[idx] * (m as f64 / (rank0 + 1) as f64));
        adj[idx] = running;
    }
    Ok(adj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedReport {
    pub name: String,
    pub report: BootstrapReport,
}

/// Report JSON with exactly the published fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub name: String,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_empir: f64,
    pub p_adj: Option<f64>,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha: f64,
    pub n: usize,
}

impl From<&NamedReport> for ReportJson {
    fn from(r: &NamedReport) -> Self {
        Self {
            name: r.name.clone(),
            estimate: r.report.estimate,
            ci_lo: r.report.ci.0,
            ci_hi: r.report.ci.1,
            p_empir: r.report.p_empir,
            p_adj: r.report.p_adj,
            b: r.report.b,
            alpha: r.report.alpha,
            n: r.report.n,
        }
    }
}

/// One bulk adjustment over every report.
pub fn adjust_reports(reports: &mut [NamedReport]) -> Result<()> {
    let p: Vec<f64> = reports.iter().map(|r| r.report.p_empir).collect();
    for (r, adj) in reports.iter_mut().zip(benjamini_hochberg(&p)?) {
        r.report.p_adj = Some(adj);
    }
    Ok(())
}

/// `"*"` below `alpha`, `"#"` for a trend below 0.1, else empty.
pub fn marker(p: f64, alpha: f64) -> &'static str {
    if p < alpha {
        "*"
    } else if p < 0.1 {
        "#"
    } else {
        ""
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceRow {
    pub name: String,
    pub estimate: f64,
    pub ci: (f64, f64),
    pub p_empir: String,
    pub p_adj: Option<f64>,
    pub marker: &'static str,
}

/// Rows with markers from `p_adj` (or `p_empir` for reports that were not adjusted).
pub fn significance_table(reports: &[NamedReport], alpha: f64) -> Vec<SignificanceRow> {
    reports
        .iter()
        .map(|r| SignificanceRow {
            name: r.name.clone(),
            estimate: r.report.estimate,
            ci: r.report.ci,
            p_empir: r.report.p_display(),
            p_adj: r.report.p_adj,
            marker: marker(r.report.p_adj.unwrap_or(r.report.p_empir), alpha),
        })
        .collect()
}

pub fn render_table(rows: &[SignificanceRow]) -> String {
    let mut out = String::from("name\tAUC\tCI\tp_empir\tp_adj\n");
    for r in rows {
        let p_adj = r.p_adj.map_or_else(|| "-".to_string(), |p| format!("{p:.4}"));
        out.push_str(&format!(
            "{}\t{:.3}{}\t({:.2}, {:.2})\t{}\t{}\n",
            r.name, r.estimate, r.marker, r.ci.0, r.ci.1, r.p_empir, p_adj
        ));
    }
    out
}

/// Scores from two unit-variance Gaussians `δ` apart, squashed through Φ.
/// The population AUC is `Φ(δ/√2)`.
pub fn gaussian_scores<R: Rng>(n_neg: usize, n_pos: usize, delta: f64, rng: &mut R) -> ScoreSet {
    let phi = Normal::standard();
    let mut labels = Vec::with_capacity(n_neg + n_pos);
    let mut scores = Vec::with_capacity(n_neg + n_pos);
    for (label, count, shift) in [(0u8, n_neg, 0.0), (1u8, n_pos, delta)] {
        for _ in 0..count {
            let z: f64 = StandardNormal.sample(rng);
            labels.push(label);
            scores.push(phi.cdf(z + shift));
        }
    }
    ScoreSet::from_pairs(&labels, &scores).expect("Φ maps into [0, 1]")
}

/// Population AUC of [`gaussian_scores`].
pub fn gaussian_auc(delta: f64) -> f64 {
    Normal::standard().cdf(delta / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;

    fn cfg(b: usize, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            b,
            seed,
            ..BootstrapConfig::default()
        }
    }

    #[test]
    fn separated_scores_give_degenerate_interval() {
        let s = ScoreSet::from_pairs(&[0, 0, 0, 1, 1, 1], &[0.1, 0.2, 0.3, 0.7, 0.8, 0.9]).unwrap();
        let r = bootstrap_auc(&s, &cfg(1000, 3)).unwrap();
        assert_eq!(r.ci, (1.0, 1.0));
        assert_eq!(r.p_empir, 1.0 / 1001.0);
        assert_eq!(r.p_display(), "<= 1.0e-3");
        assert!(r.redraws > 0);
        assert_eq!(r.skipped, 0);
    }

    #[test]
    fn interval_width_near_published_order() {
        let delta = std::f64::consts::SQRT_2 * Normal::standard().inverse_cdf(0.72);
        let mut rng = seeds::rng(11, &[]);
        let s = gaussian_scores(200, 200, delta, &mut rng);
        let r = bootstrap_auc(&s, &cfg(1000, 5)).unwrap();
        let width = r.ci.1 - r.ci.0;
        assert!((width - 0.10).abs() <= 0.04, "{width}");
        assert!(r.ci.0 <= r.ci.1);
    }

    #[test]
    fn null_scores_are_rarely_significant() {
        let mut hits = 0;
        for trial in 0..100u64 {
            let mut rng = seeds::rng(trial, &[99]);
            let s = gaussian_scores(50, 50, 1.0, &mut rng);
            let mut labels = s.labels();
            labels.shuffle(&mut rng);
            let shuffled = ScoreSet::from_pairs(&labels, &s.scores()).unwrap();
            let r = bootstrap_auc(&shuffled, &cfg(200, trial)).unwrap();
            if r.p_empir > 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 90, "{hits}");
    }

    #[test]
    fn same_seed_same_report() {
        let mut rng = seeds::rng(1, &[]);
        let s = gaussian_scores(30, 20, 0.8, &mut rng);
        assert_eq!(bootstrap_auc(&s, &cfg(300, 9)).unwrap(), bootstrap_auc(&s, &cfg(300, 9)).unwrap());
        assert_ne!(bootstrap_auc(&s, &cfg(300, 9)).unwrap(), bootstrap_auc(&s, &cfg(300, 10)).unwrap());
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let one = ScoreSet::from_pairs(&[1, 1], &[0.3, 0.4]).unwrap();
        assert!(matches!(bootstrap_auc(&one, &cfg(10, 0)), Err(StatsError::Metrics(_))));
        let s = ScoreSet::from_pairs(&[0, 1], &[0.3, 0.4]).unwrap();
        assert!(bootstrap_auc(&s, &cfg(0, 0)).is_err());
        let bad_alpha = BootstrapConfig { alpha: 1.0, ..cfg(10, 0) };
        assert!(bootstrap_auc(&s, &bad_alpha).is_err());
    }

    #[test]
    fn bh_examples() {
        let close = |a: Vec<f64>, b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12);
        assert!(close(benjamini_hochberg(&[0.005, 0.02, 0.1]).unwrap(), &[0.015, 0.03, 0.1]));
        assert!(close(benjamini_hochberg(&[0.01, 0.02, 0.03, 0.04]).unwrap(), &[0.04; 4]));
        assert_eq!(benjamini_hochberg(&[0.37]).unwrap(), vec![0.37]);
        assert!(matches!(benjamini_hochberg(&[0.0]), Err(StatsError::PValue(_))));
        assert!(benjamini_hochberg(&[1.2]).is_err());
    }

    #[test]
    fn bh_reapplied_can_grow() {
        let once = benjamini_hochberg(&[0.005, 0.02, 0.1]).unwrap();
        let twice = benjamini_hochberg(&once).unwrap();
        assert!((twice[0] - 0.045).abs() < 1e-12 && (twice[1] - 0.045).abs() < 1e-12);
    }

    #[test]
    fn markers() {
        assert_eq!(marker(0.0011, 0.05), "*");
        assert_eq!(marker(0.055, 0.05), "#");
        assert_eq!(marker(0.5, 0.05), "");
        assert_eq!(marker(0.05, 0.05), "#");
    }

    #[test]
    fn report_json_has_exact_fields() {
        let s = ScoreSet::from_pairs(&[0, 1, 0, 1], &[0.2, 0.6, 0.4, 0.5]).unwrap();
        let mut reports = vec![NamedReport {
            name: "val".into(),
            report: bootstrap_auc(&s, &cfg(20, 1)).unwrap(),
        }];
        adjust_reports(&mut reports).unwrap();
        let v = serde_json::to_value(ReportJson::from(&reports[0])).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(keys, ["B", "alpha", "ci_hi", "ci_lo", "estimate", "n", "name", "p_adj", "p_empir"]);
        assert_eq!(v["B"], 20);
        let rows = significance_table(&reports, 0.05);
        assert!(render_table(&rows).lines().count() == 2);
    }

    #[test]
    fn quantile_type7() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&x, 0.0), 1.0);
        assert_eq!(quantile_sorted(&x, 1.0), 4.0);
        assert_eq!(quantile_sorted(&x, 0.5), 2.5);
        assert!((quantile_sorted(&x, 0.25) - 1.75).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn bh_properties(p in proptest::collection::vec(1e-6f64..=1.0, 1..40)) {
            let adj = benjamini_hochberg(&p).unwrap();
            for (a, q) in adj.iter().zip(&p) {
                prop_assert!(a >= q && *a <= 1.0);
            }
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
            for w in idx.windows(2) {
                prop_assert!(adj[w[0]] <= adj[w[1]]);
            }
            // re-adjusting never lowers a value; it is not idempotent in general
            let twice = benjamini_hochberg(&adj).unwrap();
            for (x, y) in twice.iter().zip(&adj) {
                prop_assert!(x >= y);
            }
        }
    }
}

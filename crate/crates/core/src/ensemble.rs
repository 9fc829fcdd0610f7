//! (ℓ, L)-ensembles, the reshuffled-ensemble size sweep and the
//! validation-to-test regression study.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::index::sample;
use thiserror::Error;

use crate::data::{split_patients, Manifest, Partition, PartitionSpec};
use crate::metrics::{accuracy, auc, ScoreSet};
use crate::model::{build_model, Model, ModelConfig};
use crate::preprocess::PreprocessConfig;
use crate::seeds;
use crate::stats::quantile_sorted;
use crate::train::{predict, score_set, train, ImageSet, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid ensemble: {0}")]
    Spec(String),
    #[error("no predictions for member `{0}`")]
    MissingMember(String),
    #[error("member `{id}` has {got} predictions, expected {want}")]
    Length { id: String, got: usize, want: usize },
    #[error("regression: {0}")]
    Regression(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

#[derive(Debug, Clone, PartialEq)]
pub struct MemberRef {
    pub id: String,
    pub val_auc: f64,
}

/// The best `ell` of `L` members by validation AUC.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec {
    pub ell: usize,
    /// Sorted by validation AUC descending, ties by id.
    pub members: Vec<MemberRef>,
}

impl EnsembleSpec {
    pub fn new(ell: usize, big_l: usize, mut members: Vec<MemberRef>) -> Result<Self> {
        if members.len() != big_l {
            return Err(EnsembleError::Spec(format!("L = {big_l} but {} members given", members.len())));
        }
        if ell == 0 || ell > big_l {
            return Err(EnsembleError::Spec(format!("need 1 <= ell <= L, got ell = {ell}, L = {big_l}")));
        }
        let mut ids: Vec<&str> = members.iter().map(|m| m.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(EnsembleError::Spec(format!("duplicate member id `{}`", w[0])));
        }
        members.sort_by(|a, b| b.val_auc.total_cmp(&a.val_auc).then_with(|| a.id.cmp(&b.id)));
        Ok(Self { ell, members })
    }

    pub fn big_l(&self) -> usize {
        self.members.len()
    }

    pub fn selected(&self) -> &[MemberRef] {
        &self.members[..self.ell]
    }
}

/// Per-sample mean of the given probability vectors, summed in the order
/// given, clamped into the member range so rounding cannot leave it.
pub fn mean_probabilities(members: &[&[f64]]) -> Vec<f64> {
    let Some(first) = members.first() else {
        return Vec::new();
    };
    let k = members.len() as f64;
    (0..first.len())
        .map(|i| {
            let (mut sum, mut lo, mut hi) = (0.0, f64::INFINITY, f64::NEG_INFINITY);
            for m in members {
                sum += m[i];
                lo = lo.min(m[i]);
                hi = hi.max(m[i]);
            }
            (sum / k).clamp(lo, hi)
        })
        .collect()
}

/// Averages the selected members' probabilities. Members are summed in id
/// order, so the result does not depend on how `probs` was assembled.
pub fn ensemble_predict(spec: &EnsembleSpec, probs: &BTreeMap<String, Vec<f64>>) -> Result<Vec<f64>> {
    let mut ids: Vec<&str> = spec.selected().iter().map(|m| m.id.as_str()).collect();
    ids.sort_unstable();
    let vecs = ids
        .iter()
        .map(|id| {
            probs
                .get(*id)
                .map(Vec::as_slice)
                .ok_or_else(|| EnsembleError::MissingMember(id.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let want = vecs[0].len();
    for (id, v) in ids.iter().zip(&vecs) {
        if v.len() != want {
            return Err(EnsembleError::Length {
                id: id.to_string(),
                got: v.len(),
                want,
            });
        }
    }
    Ok(mean_probabilities(&vecs))
}

/// One member of a reshuffled ensemble: its own train/val split of the
/// development set and its test-set probabilities.
#[derive(Debug, Clone)]
pub struct SweepMember {
    pub val_auc: f64,
    pub val_acc: f64,
    pub val_scores: ScoreSet,
    pub test_probs: Vec<f64>,
    pub test_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub size: usize,
    pub trial: usize,
    /// Indices into the member list, ascending.
    pub members: Vec<usize>,
    pub test_auc: f64,
    pub pooled_val_auc: f64,
    pub val_acc: f64,
    pub min_val_auc: f64,
    pub max_val_auc: f64,
    pub mean_val_auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeSummary {
    pub size: usize,
    pub mean_test_auc: f64,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub n_models: usize,
    pub sizes: Vec<usize>,
    pub trials_per_size: usize,
    /// `(train, val)` fractions of the development set for each member.
    pub split: (f64, f64),
    pub seed: u64,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_models == 0 || self.trials_per_size == 0 {
            return Err(EnsembleError::Spec("n_models and trials_per_size must be positive".into()));
        }
        if let Some(&k) = self.sizes.iter().find(|&&k| k == 0 || k > self.n_models) {
            return Err(EnsembleError::Spec(format!(
                "ensemble size {k} outside [1, {}]",
                self.n_models
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub members: Vec<SweepMember>,
    pub rows: Vec<SweepRow>,
}

impl SweepOutcome {
    pub fn summary(&self) -> Vec<SizeSummary> {
        let mut by_size: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            by_size.entry(r.size).or_default().push(r.test_auc);
        }
        by_size
            .into_iter()
            .map(|(size, mut aucs)| {
                aucs.sort_by(f64::total_cmp);
                SizeSummary {
                    size,
                    mean_test_auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
                    ci: (quantile_sorted(&aucs, 0.025), quantile_sorted(&aucs, 0.975)),
                }
            })
            .collect()
    }

    /// `size,trial,test_auc`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("size,trial,test_auc\n");
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.size, r.trial, r.test_auc).expect("string write");
        }
        out
    }
}

/// Scores a trial ensemble of `picked` members.
fn sweep_row(members: &[SweepMember], test_labels: &[u8], size: usize, trial: usize, picked: Vec<usize>) -> Result<SweepRow> {
    let probs: Vec<&[f64]> = picked.iter().map(|&i| members[i].test_probs.as_slice()).collect();
    let test = ScoreSet::from_pairs(test_labels, &mean_probabilities(&probs))?;
    let vals: Vec<f64> = picked.iter().map(|&i| members[i].val_auc).collect();
    let mut pooled_labels = Vec::new();
    let mut pooled_scores = Vec::new();
    for &i in &picked {
        pooled_labels.extend(members[i].val_scores.labels());
        pooled_scores.extend(members[i].val_scores.scores());
    }
    Ok(SweepRow {
        size,
        trial,
        test_auc: auc(&test)?,
        pooled_val_auc: auc(&ScoreSet::from_pairs(&pooled_labels, &pooled_scores)?)?,
        val_acc: picked.iter().map(|&i| members[i].val_acc).sum::<f64>() / size as f64,
        min_val_auc: vals.iter().copied().fold(f64::INFINITY, f64::min),
        max_val_auc: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_val_auc: vals.iter().sum::<f64>() / size as f64,
        members: picked,
    })
}

/// Trains `n_models` members, each on a fresh patient-level train/val split
/// of `dev`, then scores random ensembles of each requested size on `test`.
/// Members within a trial are drawn without replacement.
pub fn reshuffle_ensemble_sweep(
    dev: &Manifest,
    test: &ImageSet,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    sweep: &SweepConfig,
    mut on_member: impl FnMut(usize, &SweepMember),
) -> Result<SweepOutcome> {
    sweep.validate()?;
    let all = ImageSet::load(dev, None, &train_cfg.preprocess)?;
    let index: BTreeMap<&str, usize> = all.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let pick = |m: &Manifest, p: Partition| -> Vec<usize> { m.in_partition(p).map(|e| index[e.image_id().as_str()]).collect() };

    let mut members = Vec::with_capacity(sweep.n_models);
    for j in 0..sweep.n_models {
        let split_seed = seeds::derive(sweep.seed, &[0, j as u64]);
        let (tr, va) = sweep.split;
        let assigned = split_patients(dev, &PartitionSpec::new(tr, va, 0.0, split_seed))?;
        let train_set = all.subset(&pick(&assigned, Partition::Train));
        let val_set = all.subset(&pick(&assigned, Partition::Val));
        let mcfg = ModelConfig {
            seed: seeds::derive(sweep.seed, &[1, j as u64]),
            ..model_cfg.clone()
        };
        let tcfg = TrainConfig {
            seed: seeds::derive(sweep.seed, &[2, j as u64]),
            ..train_cfg.clone()
        };
        let outcome = train(build_model(&mcfg)?, &train_set, &val_set, &tcfg, |_| {})?;
        let model = &outcome.best.model;
        let val_scores = score_set(&val_set, &predict(model, &val_set, &tcfg.preprocess, tcfg.normalize)?);
        let test_probs = predict(model, test, &tcfg.preprocess, tcfg.normalize)?;
        let member = SweepMember {
            val_auc: auc(&val_scores)?,
            val_acc: accuracy(&val_scores, 0.5)?,
            test_auc: auc(&ScoreSet::from_pairs(&test.labels, &test_probs)?)?,
            val_scores,
            test_probs,
        };
        on_member(j, &member);
        members.push(member);
    }
    let rows = sweep_rows(&members, &test.labels, &sweep.sizes, sweep.trials_per_size, sweep.seed)?;
    Ok(SweepOutcome { members, rows })
}

/// Trial ensembles over already-scored members.
pub fn sweep_rows(
    members: &[SweepMember],
    test_labels: &[u8],
    sizes: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &size in sizes {
        if size == 0 || size > members.len() {
            return Err(EnsembleError::Spec(format!("ensemble size {size} outside [1, {}]", members.len())));
        }
        for trial in 0..trials {
            let mut rng = seeds::rng(seed, &[3, size as u64, trial as u64]);
            let mut picked = sample(&mut rng, members.len(), size).into_vec();
            picked.sort_unstable();
            rows.push(sweep_row(members, test_labels, size, trial, picked)?);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFit {
    pub predictors: Vec<String>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub r2: f64,
    pub adjusted_r2: f64,
    pub mae: f64,
}

impl RegressionFit {
    /// The coefficient of a single-predictor fit.
    pub fn slope(&self) -> f64 {
        self.coefficients[0]
    }
}

/// Ordinary least squares of `ys` on the columns of `xs` plus an intercept,
/// by modified Gram-Schmidt on the centred predictors.
pub fn fit_linear(names: &[&str], xs: &[Vec<f64>], ys: &[f64]) -> Result<RegressionFit> {
    let p = xs.len();
    let n = ys.len();
    if p == 0 || names.len() != p {
        return Err(EnsembleError::Regression(format!("{} names for {p} predictors", names.len())));
    }
    if let Some(col) = xs.iter().find(|c| c.len() != n) {
        return Err(EnsembleError::Regression(format!("predictor of length {} for {n} responses", col.len())));
    }
    if n < p + 2 {
        return Err(EnsembleError::Regression(format!("{n} observations for {p} predictors")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let y_mean = mean(ys);
    let x_means: Vec<f64> = xs.iter().map(|c| mean(c)).collect();
    let centred: Vec<Vec<f64>> = xs.iter().zip(&x_means).map(|(c, m)| c.iter().map(|v| v - m).collect()).collect();
    let yc: Vec<f64> = ys.iter().map(|v| v - y_mean).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // Q (orthonormal columns) and upper-triangular R with centred X = QR.
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut r = vec![vec![0.0; p]; p];
    for (k, col) in centred.iter().enumerate() {
        let norm0 = dot(col, col).sqrt();
        if norm0 == 0.0 {
            return Err(EnsembleError::Regression(format!("predictor `{}` has zero variance", names[k])));
        }
        let mut v = col.clone();
        for (i, qi) in q.iter().enumerate() {
            r[i][k] = dot(qi, &v);
            for (vj, qj) in v.iter_mut().zip(qi) {
                *vj -= r[i][k] * qj;
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm <= 1e-10 * norm0 {
            return Err(EnsembleError::Regression(format!(
                "predictor `{}` is collinear with earlier predictors",
                names[k]
            )));
        }
        r[k][k] = norm;
        q.push(v.into_iter().map(|x| x / norm).collect());
    }
    let qty: Vec<f64> = q.iter().map(|qi| dot(qi, &yc)).collect();
    let mut beta = vec![0.0; p];
    for k in (0..p).rev() {
        let tail: f64 = (k + 1..p).map(|j| r[k][j] * beta[j]).sum();
        beta[k] = (qty[k] - tail) / r[k][k];
    }
    let intercept = y_mean - beta.iter().zip(&x_means).map(|(b, m)| b * m).sum::<f64>();
    let fitted = |i: usize| intercept + (0..p).map(|k| beta[k] * xs[k][i]).sum::<f64>();
    let residuals: Vec<f64> = (0..n).map(|i| ys[i] - fitted(i)).collect();
    let ss_res = dot(&residuals, &residuals);
    let ss_tot = dot(&yc, &yc);
    let r2 = if ss_tot == 0.0 { 0.0 } else { 1.0 - ss_res / ss_tot };
    let adjusted_r2 = 1.0 - (1.0 - r2) * (n - 1) as f64 / (n - p - 1) as f64;
    Ok(RegressionFit {
        predictors: names.iter().map(|s| s.to_string()).collect(),
        coefficients: beta,
        intercept,
        r2,
        adjusted_r2,
        mae: residuals.iter().map(|e| e.abs()).sum::<f64>() / n as f64,
    })
}

/// Predictor subsets, in table order.
pub const STUDY_ROWS: [&[&str]; 8] = [
    &["ensemble_val_auc"],
    &["val_acc"],
    &["min_val_auc"],
    &["max_val_auc"],
    &["mean_val_auc"],
    &["mean_val_auc", "val_acc"],
    &["mean_val_auc", "min_val_auc", "max_val_auc"],
    &["ensemble_val_auc", "val_acc", "min_val_auc", "max_val_auc", "mean_val_auc"],
];

fn predictor(row: &SweepRow, name: &str) -> f64 {
    match name {
        "ensemble_val_auc" => row.pooled_val_auc,
        "val_acc" => row.val_acc,
        "min_val_auc" => row.min_val_auc,
        "max_val_auc" => row.max_val_auc,
        "mean_val_auc" => row.mean_val_auc,
        _ => unreachable!("unknown predictor {name}"),
    }
}

/// Regresses ensemble test AUC on each predictor subset of [`STUDY_ROWS`].
/// Rows whose fit fails (e.g. a constant predictor) carry the error.
pub fn predictor_study(rows: &[SweepRow]) -> Vec<Result<RegressionFit>> {
    let ys: Vec<f64> = rows.iter().map(|r| r.test_auc).collect();
    STUDY_ROWS
        .iter()
        .map(|names| {
            let xs: Vec<Vec<f64>> = names.iter().map(|n| rows.iter().map(|r| predictor(r, n)).collect()).collect();
            fit_linear(names, &xs, &ys)
        })
        .collect()
}

pub fn study_csv(fits: &[Result<RegressionFit>]) -> String {
    let mut out = String::from("row,predictors,coefficients,intercept,r2,adjusted_r2,mae\n");
    for (i, (names, fit)) in STUDY_ROWS.iter().zip(fits).enumerate() {
        let predictors = names.join("+");
        match fit {
            Ok(f) => {
                let coefs: Vec<String> = f.coefficients.iter().map(|c| format!("{c:.4}")).collect();
                writeln!(
                    out,
                    "{i},{predictors},{},{:.4},{:.4},{:.4},{:.4}",
                    coefs.join(" "),
                    f.intercept,
                    f.r2,
                    f.adjusted_r2,
                    f.mae
                )
            }
            Err(_) => writeln!(out, "{i},{predictors},,,,,"),
        }
        .expect("string write");
    }
    out
}

/// Eval-mode probabilities of every model on `set`, keyed by member id.
pub fn member_probabilities(
    models: &BTreeMap<String, Model>,
    set: &ImageSet,
    prep: &PreprocessConfig,
    normalize: bool,
) -> Result<BTreeMap<String, Vec<f64>>> {
    models
        .iter()
        .map(|(id, m)| Ok((id.clone(), predict(m, set, prep, normalize)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn refs(aucs: &[(&str, f64)]) -> Vec<MemberRef> {
        aucs.iter().map(|&(id, val_auc)| MemberRef { id: id.into(), val_auc }).collect()
    }

    fn probs(v: &[(&str, Vec<f64>)]) -> BTreeMap<String, Vec<f64>> {
        v.iter().map(|(k, p)| (k.to_string(), p.clone())).collect()
    }

    #[test]
    fn members_sort_by_val_auc_then_id() {
        let s = EnsembleSpec::new(2, 3, refs(&[("b", 0.7), ("c", 0.8), ("a", 0.7)])).unwrap();
        let ids: Vec<&str> = s.members.iter().map(|m| m.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(s.selected().len(), 2);
        assert!(EnsembleSpec::new(0, 1, refs(&[("a", 0.5)])).is_err());
        assert!(EnsembleSpec::new(2, 1, refs(&[("a", 0.5)])).is_err());
        assert!(EnsembleSpec::new(1, 2, refs(&[("a", 0.5)])).is_err());
        assert!(EnsembleSpec::new(1, 2, refs(&[("a", 0.5), ("a", 0.6)])).is_err());
    }

    #[test]
    fn mean_of_selected_members() {
        let p = probs(&[("a", vec![0.2, 0.9]), ("b", vec![0.6, 0.1]), ("c", vec![0.5, 0.5])]);
        let two = EnsembleSpec::new(2, 3, refs(&[("a", 0.9), ("b", 0.8), ("c", 0.1)])).unwrap();
        let out = ensemble_predict(&two, &p).unwrap();
        assert!((out[0] - 0.4).abs() < 1e-15 && (out[1] - 0.5).abs() < 1e-15);
        let one = EnsembleSpec::new(1, 3, refs(&[("a", 0.1), ("b", 0.8), ("c", 0.2)])).unwrap();
        assert_eq!(ensemble_predict(&one, &p).unwrap(), p["b"]);
        let missing = EnsembleSpec::new(1, 1, refs(&[("z", 0.5)])).unwrap();
        assert!(matches!(ensemble_predict(&missing, &p), Err(EnsembleError::MissingMember(_))));
    }

    #[test]
    fn identical_members_change_nothing() {
        let labels = [0u8, 1, 0, 1, 1];
        let member = vec![0.1, 0.7, 0.3, 0.3, 0.99];
        let p = probs(&[("a", member.clone()), ("b", member.clone()), ("c", member.clone())]);
        let s = EnsembleSpec::new(3, 3, refs(&[("a", 0.5), ("b", 0.6), ("c", 0.7)])).unwrap();
        let out = ensemble_predict(&s, &p).unwrap();
        assert_eq!(out, member);
        let auc_of = |v: &[f64]| auc(&ScoreSet::from_pairs(&labels, v).unwrap()).unwrap();
        assert_eq!(auc_of(&out), auc_of(&member));
    }

    #[test]
    fn regression_examples() {
        let f = fit_linear(&["x"], &[vec![0.0, 1.0, 2.0, 3.0, 4.0]], &[1.0, 3.0, 5.0, 7.0, 9.0]).unwrap();
        assert!((f.slope() - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12 && f.mae < 1e-12);

        let f = fit_linear(&["x"], &[vec![1.0, 2.0, 3.0, 4.0]], &[2.0, 4.0, 6.0, 8.0]).unwrap();
        assert!((f.slope() - 2.0).abs() < 1e-12 && f.intercept.abs() < 1e-12);

        let f = fit_linear(&["x"], &[vec![1.0, 2.0, 3.0, 4.0]], &[5.0; 4]).unwrap();
        assert_eq!((f.slope(), f.r2), (0.0, 0.0));

        assert!(fit_linear(&["x"], &[vec![1.0; 4]], &[1.0, 2.0, 3.0, 4.0]).is_err());
        let dup = vec![1.0, 2.0, 4.0, 8.0, 3.0];
        let err = fit_linear(&["x", "y"], &[dup.clone(), dup], &[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap_err();
        assert!(err.to_string().contains("collinear"), "{err}");
        assert!(fit_linear(&["x"], &[vec![1.0, 2.0]], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn adjusted_r2_formula() {
        let xs = vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [0.1, 0.9, 2.3, 2.8, 4.4, 4.9];
        let f = fit_linear(&["x"], &[xs], &ys).unwrap();
        let want = 1.0 - (1.0 - f.r2) * 5.0 / 4.0;
        assert!((f.adjusted_r2 - want).abs() < 1e-15);
        assert!(f.r2 <= 1.0 && f.mae >= 0.0);
    }

    fn member(val_auc: f64, test_probs: Vec<f64>) -> SweepMember {
        SweepMember {
            val_auc,
            val_acc: 0.5,
            val_scores: ScoreSet::from_pairs(&[0, 1, 0, 1], &[0.2, 0.3, 0.1, val_auc]).unwrap(),
            test_auc: 0.0,
            test_probs,
        }
    }

    #[test]
    fn sweep_rows_are_reproducible_without_replacement() {
        let labels = [0u8, 1, 0, 1];
        let members: Vec<SweepMember> = (0..5)
            .map(|j| member(0.5 + 0.05 * j as f64, vec![0.2, 0.4 + 0.1 * j as f64, 0.5, 0.6]))
            .collect();
        let a = sweep_rows(&members, &labels, &[1, 3, 5], 4, 9).unwrap();
        assert_eq!(a, sweep_rows(&members, &labels, &[1, 3, 5], 4, 9).unwrap());
        for r in &a {
            assert_eq!(r.members.len(), r.size);
            assert!(r.members.windows(2).all(|w| w[0] < w[1]));
            assert!(r.min_val_auc <= r.mean_val_auc && r.mean_val_auc <= r.max_val_auc);
        }
        let full: Vec<&SweepRow> = a.iter().filter(|r| r.size == 5).collect();
        assert!(full.iter().all(|r| r.test_auc == full[0].test_auc));
        assert!(sweep_rows(&members, &labels, &[6], 1, 0).is_err());
        let out = SweepOutcome { members, rows: a };
        assert_eq!(out.summary().len(), 3);
        assert_eq!(out.to_csv().lines().next(), Some("size,trial,test_auc"));
    }

    #[test]
    fn study_has_fixed_rows() {
        let rows: Vec<SweepRow> = (0..12)
            .map(|i| {
                let x = i as f64 / 12.0;
                SweepRow {
                    size: 2,
                    trial: i,
                    members: vec![0, 1],
                    test_auc: 0.3 + 0.5 * x,
                    pooled_val_auc: 0.5 + 0.4 * x + 0.01 * (i % 3) as f64,
                    val_acc: 0.6 + 0.02 * ((i * 7) % 5) as f64,
                    min_val_auc: 0.4 + 0.3 * x + 0.02 * (i % 2) as f64,
                    max_val_auc: 0.8 + 0.1 * ((i * 5) % 4) as f64,
                    mean_val_auc: x,
                }
            })
            .collect();
        let fits = predictor_study(&rows);
        assert_eq!(fits.len(), 8);
        assert!((fits[4].as_ref().unwrap().r2 - 1.0).abs() < 1e-12);
        assert_eq!(study_csv(&fits).lines().count(), 9);
    }

    proptest! {
        #[test]
        fn ensemble_lies_within_member_range_and_ignores_order(
            raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 1..6),
            aucs in prop::collection::vec(0.0f64..1.0, 6),
        ) {
            let l = raw.len();
            let names: Vec<String> = (0..l).map(|i| format!("m{i}")).collect();
            let p: BTreeMap<String, Vec<f64>> = names.iter().cloned().zip(raw.iter().cloned()).collect();
            let members: Vec<MemberRef> = names.iter().zip(&aucs).map(|(id, &a)| MemberRef { id: id.clone(), val_auc: a }).collect();
            let spec = EnsembleSpec::new(l, l, members.clone()).unwrap();
            let out = ensemble_predict(&spec, &p).unwrap();
            for i in 0..6 {
                let lo = raw.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min);
                let hi = raw.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= out[i] && out[i] <= hi);
            }
            let mut reversed = members.clone();
            reversed.reverse();
            for m in reversed.iter_mut() {
                m.val_auc = 1.0 - m.val_auc;
            }
            let spec2 = EnsembleSpec::new(l, l, reversed).unwrap();
            prop_assert_eq!(ensemble_predict(&spec2, &p).unwrap(), out);
        }

        #[test]
        fn residuals_are_orthogonal_to_the_predictor(
            pts in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 4..40),
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let Ok(f) = fit_linear(&["x"], std::slice::from_ref(&xs), &ys) else { return Ok(()); };
            let dot: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - f.intercept - f.slope() * x) * x).sum();
            let scale: f64 = xs.iter().map(|x| x.abs()).sum::<f64>() * ys.iter().map(|y| y.abs()).sum::<f64>();
            prop_assert!(dot.abs() < 1e-9 * scale.max(1.0), "{dot}");
            prop_assert!(f.r2 <= 1.0 + 1e-12 && f.mae >= 0.0);
        }
    }
}

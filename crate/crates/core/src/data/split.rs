use rand::seq::SliceRandom;

use super::{DataError, Manifest, Partition, Result, Sex};
use crate::seeds;

const ORDER: [Partition; 3] = [Partition::Train, Partition::Val, Partition::Test];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    /// `(train, val, test)` fractions.
    pub proportions: (f64, f64, f64),
    pub seed: u64,
}

impl PartitionSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Self {
        Self {
            proportions: (train, val, test),
            seed,
        }
    }

    fn weights(&self) -> [f64; 3] {
        [self.proportions.0, self.proportions.1, self.proportions.2]
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.weights();
        if w.iter().any(|&p| !(p >= 0.0)) {
            return Err(DataError::Partition(format!("negative proportion in {w:?}")));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(DataError::Partition(format!("proportions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` by `weights`; equal remainders
/// go to the earlier slot.
fn apportion(total: usize, weights: &[f64; 3]) -> [usize; 3] {
    let sum: f64 = weights.iter().sum();
    let quotas = weights.map(|w| total as f64 * w / sum);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let assigned: usize = counts.iter().sum();
    let mut by_remainder = [0, 1, 2];
    by_remainder.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &slot in by_remainder.iter().take(total.saturating_sub(assigned)) {
        counts[slot] += 1;
    }
    counts
}

/// Assigns every patient (and so both eyes) to train, val or test.
///
/// Partition sizes are the largest-remainder rounding of the proportions, ties
/// going to train, then val. Within each partition the female count is the
/// largest-remainder share of the aggregate female proportion, so every
/// partition's sex mix is within one patient of the best match. Patients are
/// shuffled within sex by the seed and then sliced. Existing assignments are
/// overwritten.
pub fn split_patients(manifest: &Manifest, spec: &PartitionSpec) -> Result<Manifest> {
    spec.validate()?;
    let patients = manifest.patients();
    let mut females: Vec<&str> = patients.iter().filter(|p| p.1 == Sex::F).map(|p| p.0.as_str()).collect();
    let mut males: Vec<&str> = patients.iter().filter(|p| p.1 == Sex::M).map(|p| p.0.as_str()).collect();
    if females.is_empty() || males.is_empty() {
        return Err(DataError::Partition(format!(
            "need at least one patient of each sex, got {} F and {} M",
            females.len(),
            males.len()
        )));
    }
    let n = patients.len();
    let w = spec.weights();
    let totals = apportion(n, &w);
    for k in 0..3 {
        if w[k] > 0.0 && totals[k] == 0 {
            return Err(DataError::Partition(format!(
                "{} patients cannot fill a {} partition of proportion {}",
                n, ORDER[k], w[k]
            )));
        }
    }
    let f_counts = apportion(females.len(), &totals.map(|t| t as f64));
    let m_counts: Vec<usize> = (0..3)
        .map(|k| {
            totals[k]
                .checked_sub(f_counts[k])
                .ok_or_else(|| DataError::Partition("sex allocation exceeds partition size".into()))
        })
        .collect::<Result<_>>()?;

    females.shuffle(&mut seeds::rng(spec.seed, &[0]));
    males.shuffle(&mut seeds::rng(spec.seed, &[1]));
    let mut assignment = std::collections::BTreeMap::new();
    let (mut fi, mut mi) = (0, 0);
    for k in 0..3 {
        for p in &females[fi..fi + f_counts[k]] {
            assignment.insert(*p, ORDER[k]);
        }
        for p in &males[mi..mi + m_counts[k]] {
            assignment.insert(*p, ORDER[k]);
        }
        fi += f_counts[k];
        mi += m_counts[k];
    }
    let mut out = manifest.clone();
    for e in &mut out.entries {
        e.partition = assignment[e.patient_id.as_str()];
    }
    Ok(out)
}

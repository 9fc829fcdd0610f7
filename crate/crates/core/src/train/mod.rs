//! Epoch loop with per-epoch metrics, early stopping on a validation metric,
//! best-epoch checkpointing and belief histograms.

mod beliefs;
mod dataset;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use thiserror::Error;

pub use beliefs::{bce_increase_probe, probe_csv, BeliefHistogram, ProbeRow};
pub use dataset::{predict, score_set, ImageSet};

use crate::augment::{augment, AugmentPreset};
use crate::data::{DataError, Manifest, Partition};
use crate::loss::{LossError, LossKind};
use crate::metrics::{accuracy, auc, ScoreSet};
use crate::model::{Checkpoint, CheckpointMeta, Model, ModelError};
use crate::optim::{OptimError, OptimizerState, SgdConfig};
use crate::preprocess::{bilinear_resize, stack, Image, ImageError, PreprocessConfig};
use crate::seeds;
use crate::tensor::{Mode, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} partition is empty")]
    EmptyPartition(Partition),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: String,
        epoch: usize,
        batch: usize,
    },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Manifest(#[from] DataError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monitor {
    ValAuc,
    ValAcc,
}

impl Monitor {
    pub fn name(self) -> &'static str {
        match self {
            Monitor::ValAuc => "val_auc",
            Monitor::ValAcc => "val_acc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "val_auc" => Some(Monitor::ValAuc),
            "val_acc" => Some(Monitor::ValAcc),
            _ => None,
        }
    }

    fn read(self, r: &EpochRecord) -> f64 {
        match self {
            Monitor::ValAuc => r.val_auc,
            Monitor::ValAcc => r.val_acc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopPolicy {
    pub monitor: Monitor,
    pub min_epochs: usize,
    pub patience: usize,
    pub max_epochs: usize,
}

impl Default for EarlyStopPolicy {
    fn default() -> Self {
        Self {
            monitor: Monitor::ValAuc,
            min_epochs: 3,
            patience: 25,
            max_epochs: 300,
        }
    }
}

impl EarlyStopPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.min_epochs == 0 || self.patience == 0 || self.max_epochs == 0 {
            return Err(TrainError::Config(format!(
                "min_epochs, patience and max_epochs must be at least 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Whether to stop after `epoch` (1-based) given the best epoch so far.
    pub fn should_stop(&self, epoch: usize, best_epoch: usize) -> bool {
        epoch >= self.max_epochs || (epoch >= self.min_epochs && epoch - best_epoch >= self.patience)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub sgd: SgdConfig,
    pub batch_size: usize,
    pub early_stop: EarlyStopPolicy,
    pub augment: AugmentPreset,
    pub preprocess: PreprocessConfig,
    /// ImageNet channel normalisation of network inputs.
    pub normalize: bool,
    /// Drives the per-epoch shuffle, augmentation and dropout masks.
    pub seed: u64,
    pub belief_bins: usize,
    /// Belief histograms are taken at epoch 1, every `belief_every` epochs and
    /// at the final epoch; 0 keeps only the first and final.
    pub belief_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::default(),
            sgd: SgdConfig::default(),
            batch_size: 16,
            early_stop: EarlyStopPolicy::default(),
            augment: AugmentPreset::appendix(),
            preprocess: PreprocessConfig::default(),
            normalize: true,
            seed: 0,
            belief_bins: 20,
            belief_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.belief_bins == 0 {
            return Err(TrainError::Config("belief_bins must be at least 1".into()));
        }
        self.loss.validate()?;
        self.sgd.validate()?;
        self.early_stop.validate()?;
        self.augment.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub train_bce: f64,
    pub train_auc: f64,
    pub val_acc: f64,
    pub val_bce: f64,
    pub val_auc: f64,
    pub lr: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_acc,train_bce,train_auc,val_acc,val_bce,val_auc,lr";

pub fn metrics_csv(records: &[EpochRecord]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.epoch, r.train_acc, r.train_bce, r.train_auc, r.val_acc, r.val_bce, r.val_auc, r.lr
        )
        .expect("string write");
    }
    out
}

pub fn read_metrics_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(TrainError::Data(format!("metrics header must be `{METRICS_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = || TrainError::Data(format!("metrics line {}: `{line}`", i + 2));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad());
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad());
            Ok(EpochRecord {
                epoch: f[0].parse().map_err(|_| bad())?,
                train_acc: num(1)?,
                train_bce: num(2)?,
                train_auc: num(3)?,
                val_acc: num(4)?,
                val_bce: num(5)?,
                val_auc: num(6)?,
                lr: num(7)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefRecord {
    pub partition: Partition,
    pub histogram: BeliefHistogram,
}

/// Rows for one epoch's `beliefs_epoch<k>.csv`.
pub fn beliefs_csv(records: &[&BeliefRecord]) -> String {
    let mut out = String::from("partition,bin_lo,bin_hi,class0,class1\n");
    for r in records {
        for line in r.histogram.to_csv().lines().skip(1) {
            writeln!(out, "{},{line}", r.partition).expect("string write");
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub records: Vec<EpochRecord>,
    pub beliefs: Vec<BeliefRecord>,
}

impl TrainOutcome {
    /// Writes `metrics.csv`, `best.ckpt` and `beliefs_epoch<k>.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("metrics.csv"), metrics_csv(&self.records))?;
        std::fs::write(dir.join("best.ckpt"), self.best.to_bytes())?;
        let mut epochs: Vec<usize> = self.beliefs.iter().map(|b| b.histogram.epoch).collect();
        epochs.dedup();
        for k in epochs {
            let rows: Vec<&BeliefRecord> = self.beliefs.iter().filter(|b| b.histogram.epoch == k).collect();
            std::fs::write(dir.join(format!("beliefs_epoch{k}.csv")), beliefs_csv(&rows))?;
        }
        Ok(())
    }
}

/// Class-stratified histogram of eval-mode probabilities.
pub fn record_beliefs(
    model: &Model,
    set: &ImageSet,
    cfg: &TrainConfig,
    epoch: usize,
    n_bins: usize,
) -> Result<BeliefHistogram> {
    let probs = predict(model, set, &cfg.preprocess, cfg.normalize)?;
    Ok(BeliefHistogram::new(epoch, &probs, &set.labels, n_bins))
}

/// Accuracy at 0.5, unit-weight BCE and AUC (NaN when one class is absent).
fn partition_metrics(scores: &ScoreSet) -> Result<(f64, f64, f64)> {
    let acc = accuracy(scores, 0.5).map_err(|e| TrainError::Data(e.to_string()))?;
    let bce = LossKind::default().mean(&scores.scores(), &scores.labels())?;
    let a = auc(scores).unwrap_or(f64::NAN);
    Ok((acc, bce, a))
}

const SHUFFLE_TAG: u64 = 0;
const DROPOUT_TAG: u64 = 1;

/// The network input for one training sample: augmented, resized to the
/// network input when the preset does not crop, then normalised.
fn training_view(img: &Image, cfg: &TrainConfig, size: usize, epoch: usize, index: usize) -> Result<Image> {
    let out = augment(img, &cfg.augment, size, cfg.seed, epoch as u64, index as u64)?;
    let out = if out.height() != size || out.width() != size {
        bilinear_resize(&out, size, size)?
    } else {
        out
    };
    dataset::finish(out, cfg.normalize)
}

fn monitored(value: f64) -> f64 {
    if value.is_nan() {
        f64::NEG_INFINITY
    } else {
        value
    }
}

/// Trains `model` on `train`, selecting the epoch with the highest monitored
/// validation metric. `on_epoch` sees each record as it is produced.
pub fn train(
    mut model: Model,
    train_set: &ImageSet,
    val_set: &ImageSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyPartition(Partition::Train));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptyPartition(Partition::Val));
    }
    let size = model.config.input_size;
    let mut optim = OptimizerState::new(cfg.sgd);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records = Vec::new();
    let mut beliefs = Vec::new();
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 1..=cfg.early_stop.max_epochs {
        optim.epoch = epoch - 1;
        let lr = optim.lr();
        order.sort_unstable();
        order.shuffle(&mut seeds::rng(cfg.seed, &[SHUFFLE_TAG, epoch as u64]));

        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let views = batch
                .iter()
                .map(|&i| training_view(&train_set.images[i], cfg, size, epoch, i))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&Image> = views.iter().collect();
            let labels: Vec<u8> = batch.iter().map(|&i| train_set.labels[i]).collect();

            let mut tape = Tape::new();
            let vars = model.params.register(&mut tape);
            let x = tape.input(stack(&refs)?);
            let dropout_seed = seeds::derive(cfg.seed, &[DROPOUT_TAG, epoch as u64, b as u64]);
            let probs = model.forward(&mut tape, &vars, x, Mode::Train, dropout_seed)?;
            let loss = cfg.loss.on_tape(&mut tape, probs, &labels)?;
            let value = tape.value(loss).item().unwrap_or(f64::NAN);
            let non_finite = |what: String| TrainError::NonFinite {
                what,
                epoch,
                batch: b + 1,
            };
            if !value.is_finite() {
                return Err(non_finite(format!("loss {value}")));
            }
            let grads = tape.backward(loss)?;
            if let Some((name, _)) = grads.params.iter().find(|(_, g)| !g.all_finite()) {
                return Err(non_finite(format!("gradient of {name}")));
            }
            optim.step(&mut model.params, &grads)?;
        }

        let train_scores = score_set(train_set, &predict(&model, train_set, &cfg.preprocess, cfg.normalize)?);
        let val_scores = score_set(val_set, &predict(&model, val_set, &cfg.preprocess, cfg.normalize)?);
        let (train_acc, train_bce, train_auc) = partition_metrics(&train_scores)?;
        let (val_acc, val_bce, val_auc) = partition_metrics(&val_scores)?;
        let record = EpochRecord {
            epoch,
            train_acc,
            train_bce,
            train_auc,
            val_acc,
            val_bce,
            val_auc,
            lr,
        };
        on_epoch(&record);
        records.push(record);

        let m = monitored(cfg.early_stop.monitor.read(&record));
        if best.as_ref().is_none_or(|(_, v, _)| m > *v) {
            best = Some((epoch, m, model.clone()));
        }
        let best_epoch = best.as_ref().map_or(epoch, |b| b.0);
        let stop = cfg.early_stop.should_stop(epoch, best_epoch);

        let periodic = cfg.belief_every > 0 && epoch % cfg.belief_every == 0;
        if epoch == 1 || periodic || stop {
            for (partition, scores) in [(Partition::Train, &train_scores), (Partition::Val, &val_scores)] {
                beliefs.push(BeliefRecord {
                    partition,
                    histogram: BeliefHistogram::new(epoch, &scores.scores(), &scores.labels(), cfg.belief_bins),
                });
            }
        }
        if stop {
            break;
        }
    }

    let (best_epoch, _, best_model) = best.expect("max_epochs is at least 1");
    let val_auc = records[best_epoch - 1].val_auc;
    Ok(TrainOutcome {
        best: Checkpoint {
            model: best_model,
            meta: CheckpointMeta {
                epoch: best_epoch as u64,
                val_auc,
            },
        },
        best_epoch,
        records,
        beliefs,
    })
}

/// Loads the train and val partitions of `manifest` and trains on them.
pub fn train_manifest(
    model: Model,
    manifest: &Manifest,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let train_set = ImageSet::load(manifest, Some(Partition::Train), &cfg.preprocess)?;
    let val_set = ImageSet::load(manifest, Some(Partition::Val), &cfg.preprocess)?;
    train(model, &train_set, &val_set, cfg, on_epoch)
}

//! Flat `section.key = value` experiment configuration.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::augment::AugmentPreset;
use crate::kv;
use crate::loss::LossKind;
use crate::model::ModelConfig;
use crate::preprocess::{Equalization, PreprocessPreset};
use crate::stats::BootstrapConfig;
use crate::train::{Monitor, TrainConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: cannot use {value:?} ({expected})")]
    Value { key: String, value: String, expected: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleParams {
    pub ell: usize,
    pub big_l: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReshuffleParams {
    pub n_models: usize,
    pub sizes: Vec<usize>,
    pub trials: usize,
    /// `(train, val)` fractions of the development set.
    pub split: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    /// Applied when the manifest carries no partition assignment.
    pub split: (f64, f64, f64),
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bootstrap: BootstrapConfig,
    pub ensemble: EnsembleParams,
    pub reshuffle: ReshuffleParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let model = ModelConfig {
            input_size: train.preprocess.input_size,
            ..ModelConfig::default()
        };
        Self {
            name: "run".into(),
            seed: 0,
            manifest: None,
            split: (0.75, 0.125, 0.125),
            model,
            train,
            bootstrap: BootstrapConfig::default(),
            ensemble: EnsembleParams { ell: 10, big_l: 20 },
            reshuffle: ReshuffleParams {
                n_models: 10,
                sizes: vec![1, 2, 5, 10],
                trials: 20,
                split: (0.8, 0.2),
            },
        }
    }
}

fn value_err(key: &str, value: &str, expected: &str) -> ConfigError {
    ConfigError::Value {
        key: key.into(),
        value: value.into(),
        expected: expected.into(),
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| value_err(key, value, "a number"))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(value_err(key, value, "true or false")),
    }
}

fn list<T: std::str::FromStr>(key: &str, value: &str, len: Option<usize>) -> Result<Vec<T>> {
    let items = value
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| value_err(key, value, "a comma-separated list of numbers")))
        .collect::<Result<Vec<T>>>()?;
    match len {
        Some(n) if items.len() != n => Err(value_err(key, value, &format!("{n} comma-separated numbers"))),
        _ => Ok(items),
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in kv::parse(text).map_err(|e| ConfigError::Parse(e.to_string()))? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `key=value` overrides in order, then revalidates.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse(format!("override {o:?} is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "name" => self.name = value.into(),
            "seed" => {
                self.seed = num(key, value)?;
                self.model.seed = self.seed;
                t.seed = self.seed;
                self.bootstrap.seed = self.seed;
            }
            "data.manifest" => self.manifest = (!value.is_empty()).then(|| PathBuf::from(value)),
            "data.split" => {
                let v: Vec<f64> = list(key, value, Some(3))?;
                self.split = (v[0], v[1], v[2]);
            }
            "preprocess.preset" => {
                t.preprocess.preset =
                    PreprocessPreset::parse(value).ok_or_else(|| value_err(key, value, "wavelet_crop or wavelet_bilinear"))?
            }
            "preprocess.wavelet_levels" => t.preprocess.wavelet_levels = num(key, value)?,
            "preprocess.input_size" => {
                t.preprocess.input_size = num(key, value)?;
                self.model.input_size = t.preprocess.input_size;
            }
            "preprocess.equalize" => {
                t.preprocess.equalize =
                    Equalization::parse(value).ok_or_else(|| value_err(key, value, "none, global or clahe"))?
            }
            "preprocess.clahe_clip" => t.preprocess.clahe_clip = num(key, value)?,
            "preprocess.clahe_tiles" => t.preprocess.clahe_tiles = num(key, value)?,
            "preprocess.normalize" => t.normalize = boolean(key, value)?,
            "augment.preset" => {
                t.augment =
                    AugmentPreset::by_name(value).ok_or_else(|| value_err(key, value, "main_text, appendix or none"))?
            }
            "model.stem_channels" | "model.stem_stride" | "model.n_residual_units" | "model.hidden_layer_width"
            | "model.dropout_p" | "model.n_fc_layers" => self
                .model
                .set(&key["model.".len()..], value)
                .map_err(|_| value_err(key, value, "a number"))?,
            "loss.kind" => {
                t.loss = match value {
                    "bce" => match t.loss {
                        LossKind::Bce { .. } => t.loss,
                        LossKind::Balanced => LossKind::default(),
                    },
                    "balanced" => LossKind::Balanced,
                    _ => return Err(value_err(key, value, "bce or balanced")),
                }
            }
            "loss.class_weights" | "loss.clamp_eps" => {
                let LossKind::Bce {
                    class_weights,
                    clamp_eps,
                } = &mut t.loss
                else {
                    return Err(value_err(key, value, "a setting only used with loss.kind = bce"));
                };
                if key == "loss.clamp_eps" {
                    *clamp_eps = num(key, value)?;
                } else {
                    let w: Vec<f64> = list(key, value, Some(2))?;
                    *class_weights = (w[0], w[1]);
                }
            }
            "optim.lr" => t.sgd.lr0 = num(key, value)?,
            "optim.momentum" => t.sgd.momentum = num(key, value)?,
            "optim.weight_decay" => t.sgd.weight_decay = num(key, value)?,
            "optim.nesterov" => t.sgd.nesterov = boolean(key, value)?,
            "optim.gamma" => t.sgd.gamma = num(key, value)?,
            "train.batch_size" => t.batch_size = num(key, value)?,
            "train.monitor" => {
                t.early_stop.monitor = Monitor::parse(value).ok_or_else(|| value_err(key, value, "val_auc or val_acc"))?
            }
            "train.min_epochs" => t.early_stop.min_epochs = num(key, value)?,
            "train.patience" => t.early_stop.patience = num(key, value)?,
            "train.max_epochs" => t.early_stop.max_epochs = num(key, value)?,
            "train.belief_bins" => t.belief_bins = num(key, value)?,
            "train.belief_every" => t.belief_every = num(key, value)?,
            "bootstrap.b" => self.bootstrap.b = num(key, value)?,
            "bootstrap.alpha" => self.bootstrap.alpha = num(key, value)?,
            "bootstrap.mu_ref" => self.bootstrap.mu_ref = num(key, value)?,
            "ensemble.ell" => self.ensemble.ell = num(key, value)?,
            "ensemble.l" => self.ensemble.big_l = num(key, value)?,
            "reshuffle.n_models" => self.reshuffle.n_models = num(key, value)?,
            "reshuffle.sizes" => self.reshuffle.sizes = list(key, value, None)?,
            "reshuffle.trials" => self.reshuffle.trials = num(key, value)?,
            "reshuffle.split" => {
                let v: Vec<f64> = list(key, value, Some(2))?;
                self.reshuffle.split = (v[0], v[1]);
            }
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.model.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.bootstrap.validate().map_err(|e| invalid(&e))?;
        if self.model.channels != 3 {
            return Err(ConfigError::Invalid("models take 3-channel images".into()));
        }
        let (a, b, c) = self.split;
        if [a, b, c].iter().any(|&p| !(p >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid(format!("data.split {a},{b},{c} must be non-negative and sum to 1")));
        }
        let (tr, va) = self.reshuffle.split;
        if !(tr > 0.0 && va > 0.0) || ((tr + va) - 1.0).abs() > 1e-9 {
            return Err(ConfigError::Invalid(format!("reshuffle.split {tr},{va} must be positive and sum to 1")));
        }
        let e = &self.ensemble;
        if e.ell == 0 || e.ell > e.big_l {
            return Err(ConfigError::Invalid(format!("need 1 <= ensemble.ell <= ensemble.l, got {} and {}", e.ell, e.big_l)));
        }
        let r = &self.reshuffle;
        if r.n_models == 0 || r.trials == 0 || r.sizes.iter().any(|&k| k == 0 || k > r.n_models) {
            return Err(ConfigError::Invalid(format!(
                "reshuffle sizes {:?} must lie in [1, n_models = {}] with trials >= 1",
                r.sizes, r.n_models
            )));
        }
        Ok(())
    }

    /// Every key, in a fixed order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let p = &t.preprocess;
        let m = &self.model;
        let mut out = vec![
            kv::line("name", &self.name),
            kv::line("seed", self.seed),
            kv::line(
                "data.manifest",
                self.manifest.as_ref().map_or(String::new(), |p| p.display().to_string()),
            ),
            kv::line("data.split", join(&[self.split.0, self.split.1, self.split.2])),
            kv::line("preprocess.preset", p.preset.name()),
            kv::line("preprocess.wavelet_levels", p.wavelet_levels),
            kv::line("preprocess.input_size", p.input_size),
            kv::line("preprocess.equalize", p.equalize.name()),
            kv::line("preprocess.clahe_clip", p.clahe_clip),
            kv::line("preprocess.clahe_tiles", p.clahe_tiles),
            kv::line("preprocess.normalize", t.normalize),
            kv::line("augment.preset", &t.augment.name),
            kv::line("model.stem_channels", m.stem_channels),
            kv::line("model.stem_stride", m.stem_stride),
            kv::line("model.n_residual_units", m.n_residual_units),
            kv::line("model.hidden_layer_width", m.hidden_layer_width),
            kv::line("model.dropout_p", m.dropout_p),
            kv::line("model.n_fc_layers", m.n_fc_layers),
        ];
        match t.loss {
            LossKind::Bce {
                class_weights: (wf, wm),
                clamp_eps,
            } => {
                out.push(kv::line("loss.kind", "bce"));
                out.push(kv::line("loss.class_weights", join(&[wf, wm])));
                out.push(kv::line("loss.clamp_eps", clamp_eps));
            }
            LossKind::Balanced => out.push(kv::line("loss.kind", "balanced")),
        }
        out.extend([
            kv::line("optim.lr", t.sgd.lr0),
            kv::line("optim.momentum", t.sgd.momentum),
            kv::line("optim.weight_decay", t.sgd.weight_decay),
            kv::line("optim.nesterov", t.sgd.nesterov),
            kv::line("optim.gamma", t.sgd.gamma),
            kv::line("train.batch_size", t.batch_size),
            kv::line("train.monitor", t.early_stop.monitor.name()),
            kv::line("train.min_epochs", t.early_stop.min_epochs),
            kv::line("train.patience", t.early_stop.patience),
            kv::line("train.max_epochs", t.early_stop.max_epochs),
            kv::line("train.belief_bins", t.belief_bins),
            kv::line("train.belief_every", t.belief_every),
            kv::line("bootstrap.b", self.bootstrap.b),
            kv::line("bootstrap.alpha", self.bootstrap.alpha),
            kv::line("bootstrap.mu_ref", self.bootstrap.mu_ref),
            kv::line("ensemble.ell", self.ensemble.ell),
            kv::line("ensemble.l", self.ensemble.big_l),
            kv::line("reshuffle.n_models", self.reshuffle.n_models),
            kv::line("reshuffle.sizes", join(&self.reshuffle.sizes)),
            kv::line("reshuffle.trials", self.reshuffle.trials),
            kv::line("reshuffle.split", join(&[self.reshuffle.split.0, self.reshuffle.split.1])),
        ]);
        out.concat()
    }
}

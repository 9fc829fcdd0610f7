//! Mini residual network for binary classification.
//!
//! Layout: stem conv → ReLU → `n` residual units `H(x) = x + W₂·relu(W₁x + b₁) + b₂`
//! with a ReLU between consecutive units → global average pool → FC(hidden) →
//! ReLU → dropout → FC(1) → sigmoid.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, MAGIC};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::kv;
use crate::tensor::{self, Mode, ParamSet, ParamVars, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint contains unknown parameter(s): {0}")]
    UnknownParam(String),
    #[error("checkpoint is missing parameter(s): {0}")]
    MissingParam(String),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub channels: usize,
    pub stem_channels: usize,
    /// Stride of the stem convolution (the only downsampling in the network).
    pub stem_stride: usize,
    pub n_residual_units: usize,
    pub hidden_layer_width: usize,
    pub dropout_p: f64,
    pub n_fc_layers: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: 224,
            channels: 3,
            stem_channels: 16,
            stem_stride: 2,
            n_residual_units: 4,
            hidden_layer_width: 2048,
            dropout_p: 0.5,
            n_fc_layers: 2,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.n_fc_layers != 2 {
            return fail(format!("n_fc_layers must be 2, got {}", self.n_fc_layers));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        for (name, v) in [
            ("hidden_layer_width", self.hidden_layer_width),
            ("input_size", self.input_size),
            ("channels", self.channels),
            ("stem_channels", self.stem_channels),
            ("stem_stride", self.stem_stride),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.input_size + 2 < KERNEL {
            return fail(format!("input_size {} is smaller than the stem kernel", self.input_size));
        }
        Ok(())
    }

    /// Canonical text form; embedded in checkpoints and hashed.
    pub fn to_text(&self) -> String {
        [
            kv::line("input_size", self.input_size),
            kv::line("channels", self.channels),
            kv::line("stem_channels", self.stem_channels),
            kv::line("stem_stride", self.stem_stride),
            kv::line("n_residual_units", self.n_residual_units),
            kv::line("hidden_layer_width", self.hidden_layer_width),
            kv::line("dropout_p", self.dropout_p),
            kv::line("n_fc_layers", self.n_fc_layers),
            kv::line("seed", self.seed),
        ]
        .concat()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let pairs = kv::parse(text).map_err(|e| ModelError::Config(e.to_string()))?;
        let mut cfg = ModelConfig::default();
        let mut seen = Vec::new();
        for (k, v) in &pairs {
            cfg.set(k, v)?;
            seen.push(k.as_str());
        }
        for required in [
            "input_size",
            "channels",
            "stem_channels",
            "stem_stride",
            "n_residual_units",
            "hidden_layer_width",
            "dropout_p",
            "n_fc_layers",
            "seed",
        ] {
            if !seen.contains(&required) {
                return Err(ModelError::Config(format!("missing key {required}")));
            }
        }
        Ok(cfg)
    }

    /// Sets one field by name. Unknown names are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| ModelError::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "input_size" => self.input_size = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "stem_channels" => self.stem_channels = num(key, value)?,
            "stem_stride" => self.stem_stride = num(key, value)?,
            "n_residual_units" => self.n_residual_units = num(key, value)?,
            "hidden_layer_width" => self.hidden_layer_width = num(key, value)?,
            "dropout_p" => self.dropout_p = num(key, value)?,
            "n_fc_layers" => self.n_fc_layers = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(ModelError::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(self.to_text().as_bytes()).into()
    }

    fn stem_out(&self) -> usize {
        (self.input_size + 2 - KERNEL) / self.stem_stride + 1
    }
}

/// Parameters of one residual unit `H(x) = x + W₂·relu(W₁x + b₁) + b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualUnitParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

impl ResidualUnitParams {
    pub fn validate(&self) -> Result<()> {
        let (&[mid, c_in, _, _], &[c_out, mid2, _, _]) = (self.w1.shape(), self.w2.shape()) else {
            return Err(ModelError::Config("residual kernels must be rank 4".into()));
        };
        if mid != mid2 || c_in != c_out {
            return Err(ModelError::Config(format!(
                "residual unit channels: W1 {:?}, W2 {:?}",
                self.w1.shape(),
                self.w2.shape()
            )));
        }
        if self.b1.numel() != mid || self.b2.numel() != c_out {
            return Err(ModelError::Config("residual bias lengths do not match kernels".into()));
        }
        Ok(())
    }
}

fn unit_forward(tape: &mut Tape, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> tensor::Result<Var> {
    let pad = KERNEL / 2;
    let h = tape.conv2d(x, w1, Some(b1), 1, pad)?;
    let h = tape.relu(h)?;
    let f = tape.conv2d(h, w2, Some(b2), 1, pad)?;
    tape.add(x, f)
}

/// Evaluates a single residual unit on `x` (n×c×h×w) with 3×3 same-padding kernels.
pub fn residual_forward(unit: &ResidualUnitParams, x: &Tensor) -> Result<Tensor> {
    unit.validate()?;
    let mut tape = Tape::no_grad();
    let xs = tape.input(x.clone());
    let w1 = tape.input(unit.w1.clone());
    let b1 = tape.input(unit.b1.clone());
    let w2 = tape.input(unit.w2.clone());
    let b2 = tape.input(unit.b2.clone());
    let out = unit_forward(&mut tape, xs, w1, b1, w2, b2)?;
    Ok(tape.value(out).clone())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
}

fn unit_name(i: usize, part: &str) -> String {
    format!("unit{i}.{part}")
}

/// Parameter names in forward order, with their shapes.
fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let c = cfg.stem_channels;
    let k = KERNEL;
    let mut v = vec![
        ("stem.weight".to_string(), vec![c, cfg.channels, k, k]),
        ("stem.bias".to_string(), vec![c]),
    ];
    for i in 0..cfg.n_residual_units {
        v.push((unit_name(i, "w1"), vec![c, c, k, k]));
        v.push((unit_name(i, "b1"), vec![c]));
        v.push((unit_name(i, "w2"), vec![c, c, k, k]));
        v.push((unit_name(i, "b2"), vec![c]));
    }
    v.push(("fc1.weight".into(), vec![cfg.hidden_layer_width, c]));
    v.push(("fc1.bias".into(), vec![cfg.hidden_layer_width]));
    v.push(("fc2.weight".into(), vec![1, cfg.hidden_layer_width]));
    v.push(("fc2.bias".into(), vec![1]));
    v
}

/// Builds a model with He (fan-in) normal weights and zero biases, seeded by `config.seed`.
pub fn build_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamSet::new();
    for (name, shape) in layout(config) {
        let value = if shape.len() == 1 {
            Tensor::zeros(&shape)
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
            let numel = shape.iter().product();
            Tensor::new(shape, (0..numel).map(|_| normal.sample(&mut rng)).collect())?
        };
        params.insert(name, value);
    }
    Ok(Model {
        config: config.clone(),
        params,
    })
}

/// Largest probability strictly below one.
const P_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

impl Model {
    pub fn check_batch(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        match shape {
            [_, ch, h, w] if *ch == c.channels && *h == c.input_size && *w == c.input_size => Ok(()),
            _ => Err(ModelError::Tensor(TensorError::ShapeMismatch {
                op: "model",
                detail: format!(
                    "batch {shape:?}, expected (n, {}, {}, {})",
                    c.channels, c.input_size, c.input_size
                ),
            })),
        }
    }

    /// Records the forward pass on `tape` and returns the `n×1` probability node.
    pub fn forward(&self, tape: &mut Tape, vars: &ParamVars, x: Var, mode: Mode, dropout_seed: u64) -> Result<Var> {
        self.check_batch(tape.value(x).shape())?;
        let cfg = &self.config;
        let mut h = tape.conv2d(
            x,
            vars.get("stem.weight"),
            Some(vars.get("stem.bias")),
            cfg.stem_stride,
            KERNEL / 2,
        )?;
        h = tape.relu(h)?;
        for i in 0..cfg.n_residual_units {
            if i > 0 {
                h = tape.relu(h)?;
            }
            h = unit_forward(
                tape,
                h,
                vars.get(&unit_name(i, "w1")),
                vars.get(&unit_name(i, "b1")),
                vars.get(&unit_name(i, "w2")),
                vars.get(&unit_name(i, "b2")),
            )?;
        }
        let pooled = tape.global_avg_pool(h)?;
        let hidden = tape.linear(pooled, vars.get("fc1.weight"), Some(vars.get("fc1.bias")))?;
        let hidden = tape.relu(hidden)?;
        let hidden = tape.dropout(hidden, cfg.dropout_p, mode, dropout_seed)?;
        let logit = tape.linear(hidden, vars.get("fc2.weight"), Some(vars.get("fc2.bias")))?;
        Ok(tape.sigmoid(logit)?)
    }

    /// Class-1 probabilities for a batch, clamped into the open interval (0, 1).
    pub fn predict_proba(&self, batch: &Tensor, mode: Mode, dropout_seed: u64) -> Result<Vec<f64>> {
        self.check_batch(batch.shape())?;
        let mut tape = Tape::no_grad();
        let vars = self.params.register(&mut tape);
        let x = tape.input(batch.clone());
        let p = self.forward(&mut tape, &vars, x, mode, dropout_seed)?;
        Ok(tape
            .value(p)
            .data()
            .iter()
            .map(|v| v.clamp(f64::MIN_POSITIVE, P_MAX))
            .collect())
    }

    /// Zeros every parameter whose name starts with `prefix`.
    pub fn zero_params(&mut self, prefix: &str) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                t.data_mut().fill(0.0);
            }
        }
    }

    pub fn residual_unit(&self, i: usize) -> Option<ResidualUnitParams> {
        Some(ResidualUnitParams {
            w1: self.params.get(&unit_name(i, "w1"))?.clone(),
            b1: self.params.get(&unit_name(i, "b1"))?.clone(),
            w2: self.params.get(&unit_name(i, "w2"))?.clone(),
            b2: self.params.get(&unit_name(i, "b2"))?.clone(),
        })
    }

    /// SHA-256 over parameter names, shapes and little-endian values.
    pub fn param_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for (name, t) in self.params.iter() {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().into()
    }

    /// Spatial size after the stem.
    pub fn feature_size(&self) -> usize {
        self.config.stem_out()
    }
}

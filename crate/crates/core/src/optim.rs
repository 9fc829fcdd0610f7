//! SGD with Nesterov momentum, coupled weight decay and an exponential
//! per-epoch learning-rate decay.
//!
//! The update for each parameter `θ` with gradient `g` and velocity `v` is
//!
//! ```text
//! g ← g + wd·θ
//! v ← m·v + g
//! Δ ← g + m·v   (nesterov)   or   v   (classical momentum)
//! θ ← θ − lr(epoch)·Δ,        lr(epoch) = lr0 · γ^epoch
//! ```

use std::collections::BTreeMap;

use thiserror::Error;

use crate::tensor::{Gradients, ParamSet, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("no gradient for parameter {0}")]
    MissingGradient(String),
    #[error("gradient for {name} has shape {grad:?}, parameter has {param:?}")]
    ShapeMismatch {
        name: String,
        grad: Vec<usize>,
        param: Vec<usize>,
    },
    #[error("invalid optimizer setting: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub nesterov: bool,
    pub gamma: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            momentum: 0.9,
            weight_decay: 1e-3,
            nesterov: true,
            gamma: 0.99,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.lr0 > 0.0) {
            return Err(OptimError::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.gamma > 0.0) {
            return Err(OptimError::Config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(OptimError::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(OptimError::Config(format!(
                "weight decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: SgdConfig,
    buffers: BTreeMap<String, Tensor>,
    /// Zero-based epoch used for the learning rate.
    pub epoch: usize,
}

impl OptimizerState {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            buffers: BTreeMap::new(),
            epoch: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr_at(self.epoch)
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(&self.config, epoch)
    }

    pub fn velocity(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    /// Applies one update to every parameter in `params`.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<(), OptimError> {
        for (name, theta) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| OptimError::MissingGradient(name.to_string()))?;
            if g.shape() != theta.shape() {
                return Err(OptimError::ShapeMismatch {
                    name: name.to_string(),
                    grad: g.shape().to_vec(),
                    param: theta.shape().to_vec(),
                });
            }
        }
        let lr = self.lr();
        let SgdConfig {
            momentum: m,
            weight_decay: wd,
            nesterov,
            ..
        } = self.config;
        for (name, theta) in params.iter_mut() {
            let g = grads.get(name).expect("checked above");
            let v = self
                .buffers
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(theta.shape()));
            for ((t, &gi), vi) in theta.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                let g = gi + wd * *t;
                *vi = m * *vi + g;
                let delta = if nesterov { g + m * *vi } else { *vi };
                *t -= lr * delta;
            }
        }
        Ok(())
    }
}

/// `lr0 · γ^epoch`.
pub fn lr_at(config: &SgdConfig, epoch: usize) -> f64 {
    config.lr0 * config.gamma.powi(epoch as i32)
}

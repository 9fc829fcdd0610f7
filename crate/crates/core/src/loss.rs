//! Binary cross-entropy (class-weighted, clamped) and the bounded cosine loss.

use std::f64::consts::PI;

use thiserror::Error;

use crate::tensor::{self, OpKind, Tape, Var};

pub const DEFAULT_CLAMP_EPS: f64 = 1e-7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("label must be 0 or 1, got {0}")]
    Label(u8),
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("clamp_eps must lie in (0, 0.5), got {0}")]
    ClampEps(f64),
    #[error("class weights must be positive, got ({0}, {1})")]
    ClassWeights(f64, f64),
    #[error("{0} probabilities for {1} labels")]
    Length(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// `class_weights` is `(w_F, w_M)`: the factor for label 0 and label 1.
    Bce {
        class_weights: (f64, f64),
        clamp_eps: f64,
    },
    Balanced,
}

impl Default for LossKind {
    fn default() -> Self {
        LossKind::Bce {
            class_weights: (1.0, 1.0),
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }
}

impl LossKind {
    pub fn bce(w_f: f64, w_m: f64) -> Self {
        LossKind::Bce {
            class_weights: (w_f, w_m),
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if let LossKind::Bce {
            class_weights: (wf, wm),
            clamp_eps,
        } = *self
        {
            if !(clamp_eps > 0.0 && clamp_eps < 0.5) {
                return Err(LossError::ClampEps(clamp_eps));
            }
            if !(wf > 0.0 && wm > 0.0) {
                return Err(LossError::ClassWeights(wf, wm));
            }
        }
        Ok(())
    }

    fn weight(&self, y: f64) -> f64 {
        match *self {
            LossKind::Bce {
                class_weights: (wf, wm),
                ..
            } => {
                if y > 0.5 {
                    wm
                } else {
                    wf
                }
            }
            LossKind::Balanced => 1.0,
        }
    }

    /// Records the mean loss of `probs` against `labels` on the tape.
    pub fn on_tape(&self, tape: &mut Tape, probs: Var, labels: &[u8]) -> tensor::Result<Var> {
        let ys: Vec<f64> = labels.iter().map(|&y| f64::from(y)).collect();
        match *self {
            LossKind::Bce { clamp_eps, .. } => {
                let weights = ys.iter().map(|&y| self.weight(y)).collect();
                tape.forward_op(
                    OpKind::Bce {
                        labels: ys,
                        weights,
                        eps: clamp_eps,
                    },
                    &[probs],
                )
            }
            LossKind::Balanced => tape.forward_op(OpKind::Balanced { labels: ys }, &[probs]),
        }
    }

    /// Mean loss over a batch, without a tape.
    pub fn mean(&self, probs: &[f64], labels: &[u8]) -> Result<f64, LossError> {
        if probs.len() != labels.len() {
            return Err(LossError::Length(probs.len(), labels.len()));
        }
        let mut total = 0.0;
        for (&p, &y) in probs.iter().zip(labels) {
            total += match self {
                LossKind::Bce { .. } => bce_loss(p, y, self)?,
                LossKind::Balanced => balanced_loss(p, y)?,
            };
        }
        Ok(total / probs.len() as f64)
    }
}

/// `-y ln h - (1-y) ln(1-h)` with `h` clamped to `[eps, 1-eps]`; only the active
/// term is evaluated, so `0 log 0` never arises.
#[inline]
pub(crate) fn bce_term(h: f64, y: f64, eps: f64) -> f64 {
    let h = h.clamp(eps, 1.0 - eps);
    if y > 0.5 {
        -h.ln()
    } else {
        -(1.0 - h).ln()
    }
}

#[inline]
pub(crate) fn bce_term_grad(h: f64, y: f64, eps: f64) -> f64 {
    if h < eps || h > 1.0 - eps {
        return 0.0;
    }
    if y > 0.5 {
        -1.0 / h
    } else {
        1.0 / (1.0 - h)
    }
}

#[inline]
pub(crate) fn balanced_term(p: f64, y: f64) -> f64 {
    let c = (PI * p).cos();
    if y > 0.5 {
        1.0 + c
    } else {
        1.0 - c
    }
}

#[inline]
pub(crate) fn balanced_term_grad(p: f64, y: f64) -> f64 {
    let s = PI * (PI * p).sin();
    if y > 0.5 {
        -s
    } else {
        s
    }
}

fn check(p: f64, y: u8) -> Result<(), LossError> {
    if y > 1 {
        return Err(LossError::Label(y));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(LossError::Probability(p));
    }
    Ok(())
}

/// Class-weighted BCE of a single prediction. `kind` must be [`LossKind::Bce`];
/// a `Balanced` kind is treated as unit-weight BCE with the default clamp.
pub fn bce_loss(h: f64, y: u8, kind: &LossKind) -> Result<f64, LossError> {
    check(h, y)?;
    kind.validate()?;
    let eps = match *kind {
        LossKind::Bce { clamp_eps, .. } => clamp_eps,
        LossKind::Balanced => DEFAULT_CLAMP_EPS,
    };
    let y = f64::from(y);
    Ok(kind.weight(y) * bce_term(h, y, eps))
}

/// `1 + cos(πp)` for label 1, `1 - cos(πp)` for label 0.
pub fn balanced_loss(p: f64, y: u8) -> Result<f64, LossError> {
    check(p, y)?;
    Ok(balanced_term(p, f64::from(y)))
}

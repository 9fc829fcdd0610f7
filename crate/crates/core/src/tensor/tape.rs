use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernels::{self, ConvGeom};
use super::{Result, Tensor, TensorError};
use crate::loss;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Train/eval switch for stochastic layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Train,
    Eval,
}

/// Differentiable operations together with their attributes.
#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    /// Inputs `x: n×c×h×w`, `w: o×c×kh×kw` and an optional bias of length `o`.
    Conv2d { stride: usize, padding: usize },
    /// Inputs `x: n×in`, `w: out×in` and an optional bias of length `out`.
    Linear,
    Relu,
    Sigmoid,
    /// Inverted dropout; the mask is drawn from `seed`. Identity in eval mode.
    Dropout { p: f64, mode: Mode, seed: u64 },
    /// `n×c×h×w -> n×c`.
    GlobalAvgPool,
    Add,
    Mul,
    Scale(f64),
    Sum,
    Mean,
    /// Mean class-weighted binary cross-entropy of probabilities against labels.
    Bce {
        labels: Vec<f64>,
        weights: Vec<f64>,
        eps: f64,
    },
    /// Mean bounded cosine loss of probabilities against labels.
    Balanced { labels: Vec<f64> },
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Conv2d { .. } => "conv2d",
            OpKind::Linear => "linear",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Dropout { .. } => "dropout",
            OpKind::GlobalAvgPool => "global_avg_pool",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Sum => "sum",
            OpKind::Mean => "mean",
            OpKind::Bce { .. } => "bce",
            OpKind::Balanced { .. } => "balanced",
        }
    }
}

#[derive(Debug)]
enum Saved {
    None,
    Conv(ConvGeom),
    Mask(Vec<f64>),
}

#[derive(Debug)]
struct Node {
    op: Option<OpKind>,
    inputs: Vec<usize>,
    value: Tensor,
    param: Option<String>,
    saved: Saved,
}

/// Append-only record of a forward computation.
#[derive(Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Parameter gradients keyed by the name given to [`Tape::param`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub params: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }
}

fn mismatch(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that only evaluates; [`Tape::backward`] fails on it.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Option<OpKind>, inputs: Vec<usize>, value: Tensor, saved: Saved) -> Var {
        self.nodes.push(Node {
            op,
            inputs,
            value,
            param: None,
            saved,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf (data, labels). Receives no gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(None, Vec::new(), value, Saved::None)
    }

    /// Named trainable leaf.
    pub fn param(&mut self, name: &str, value: Tensor) -> Var {
        let v = self.input(value);
        self.nodes[v.0].param = Some(name.to_string());
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Runs one op on existing nodes and records it.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let op = kind.name();
        let arity = |lo: usize, hi: usize| -> Result<()> {
            if inputs.len() < lo || inputs.len() > hi {
                Err(TensorError::Arity {
                    op,
                    expected: lo,
                    got: inputs.len(),
                })
            } else {
                Ok(())
            }
        };
        let (value, saved) = match &kind {
            OpKind::Conv2d { stride, padding } => {
                arity(2, 3)?;
                self.conv2d_value(inputs, *stride, *padding)?
            }
            OpKind::Linear => {
                arity(2, 3)?;
                (self.linear_value(inputs)?, Saved::None)
            }
            OpKind::Relu => {
                arity(1, 1)?;
                (self.value(inputs[0]).map(|v| v.max(0.0)), Saved::None)
            }
            OpKind::Sigmoid => {
                arity(1, 1)?;
                (self.value(inputs[0]).map(kernels::sigmoid), Saved::None)
            }
            OpKind::Dropout { p, mode, seed } => {
                arity(1, 1)?;
                if !(0.0..1.0).contains(p) {
                    return Err(TensorError::InvalidAttr {
                        op,
                        detail: format!("probability {p} outside [0, 1)"),
                    });
                }
                let x = self.value(inputs[0]);
                match mode {
                    Mode::Eval => (x.clone(), Saved::None),
                    Mode::Train => {
                        let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                        let keep = 1.0 / (1.0 - p);
                        let mask: Vec<f64> = (0..x.numel())
                            .map(|_| if rng.random::<f64>() < *p { 0.0 } else { keep })
                            .collect();
                        let mut out = x.clone();
                        out.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                        (out, Saved::Mask(mask))
                    }
                }
            }
            OpKind::GlobalAvgPool => {
                arity(1, 1)?;
                let x = self.value(inputs[0]);
                let &[n, c, h, w] = x.shape() else {
                    return Err(mismatch(op, format!("expected n×c×h×w, got {:?}", x.shape())));
                };
                let hw = (h * w) as f64;
                let data = x.data().chunks(h * w).map(|p| p.iter().sum::<f64>() / hw).collect();
                (Tensor::new(vec![n, c], data)?, Saved::None)
            }
            OpKind::Add | OpKind::Mul => {
                arity(2, 2)?;
                let (a, b) = (self.value(inputs[0]), self.value(inputs[1]));
                if a.shape() != b.shape() {
                    return Err(mismatch(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
                }
                let mut out = a.clone();
                let is_add = kind == OpKind::Add;
                out.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| {
                    if is_add {
                        *x += y
                    } else {
                        *x *= y
                    }
                });
                (out, Saved::None)
            }
            OpKind::Scale(s) => {
                arity(1, 1)?;
                (self.value(inputs[0]).map(|v| v * s), Saved::None)
            }
            OpKind::Sum | OpKind::Mean => {
                arity(1, 1)?;
                let x = self.value(inputs[0]);
                let mut total: f64 = x.data().iter().sum();
                if kind == OpKind::Mean {
                    total /= x.numel() as f64;
                }
                (Tensor::scalar(total), Saved::None)
            }
            OpKind::Bce {
                labels,
                weights,
                eps,
            } => {
                arity(1, 1)?;
                let h = self.value(inputs[0]);
                if h.numel() != labels.len() || weights.len() != labels.len() {
                    return Err(mismatch(
                        op,
                        format!(
                            "{} probabilities, {} labels, {} weights",
                            h.numel(),
                            labels.len(),
                            weights.len()
                        ),
                    ));
                }
                let total: f64 = h
                    .data()
                    .iter()
                    .zip(labels)
                    .zip(weights)
                    .map(|((&p, &y), &w)| w * loss::bce_term(p, y, *eps))
                    .sum();
                (Tensor::scalar(total / labels.len() as f64), Saved::None)
            }
            OpKind::Balanced { labels } => {
                arity(1, 1)?;
                let p = self.value(inputs[0]);
                if p.numel() != labels.len() {
                    return Err(mismatch(
                        op,
                        format!("{} probabilities, {} labels", p.numel(), labels.len()),
                    ));
                }
                let total: f64 = p
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&p, &y)| loss::balanced_term(p, y))
                    .sum();
                (Tensor::scalar(total / labels.len() as f64), Saved::None)
            }
        };
        let ids = inputs.iter().map(|v| v.0).collect();
        Ok(self.push(Some(kind), ids, value, saved))
    }

    fn conv2d_value(&self, inputs: &[Var], stride: usize, pad: usize) -> Result<(Tensor, Saved)> {
        const OP: &str = "conv2d";
        let x = self.value(inputs[0]);
        let w = self.value(inputs[1]);
        let (&[n, c, h, wd], &[o, wc, kh, kw]) = (x.shape(), w.shape()) else {
            return Err(mismatch(
                OP,
                format!("input {:?} / kernel {:?} must both be rank 4", x.shape(), w.shape()),
            ));
        };
        if c != wc {
            return Err(mismatch(OP, format!("input has {c} channels, kernel expects {wc}")));
        }
        let bias = match inputs.get(2) {
            Some(b) => {
                let b = self.value(*b);
                if b.numel() != o {
                    return Err(mismatch(OP, format!("bias has {} values for {o} filters", b.numel())));
                }
                Some(b.data())
            }
            None => None,
        };
        let g = ConvGeom::new(c, h, wd, kh, kw, stride, pad).ok_or_else(|| TensorError::InvalidAttr {
            op: OP,
            detail: format!("kernel {kh}×{kw} stride {stride} pad {pad} on {h}×{wd}"),
        })?;
        let out = kernels::conv2d_forward(x.data(), n, &g, w.data(), o, bias);
        Ok((Tensor::new(vec![n, o, g.ho, g.wo], out)?, Saved::Conv(g)))
    }

    fn linear_value(&self, inputs: &[Var]) -> Result<Tensor> {
        const OP: &str = "linear";
        let x = self.value(inputs[0]);
        let w = self.value(inputs[1]);
        let (&[n, fin], &[fout, win]) = (x.shape(), w.shape()) else {
            return Err(mismatch(
                OP,
                format!("input {:?} / weight {:?} must both be rank 2", x.shape(), w.shape()),
            ));
        };
        if fin != win {
            return Err(mismatch(OP, format!("input width {fin}, weight expects {win}")));
        }
        let mut out = vec![0.0; n * fout];
        if let Some(b) = inputs.get(2) {
            let b = self.value(*b);
            if b.numel() != fout {
                return Err(mismatch(OP, format!("bias has {} values for {fout} outputs", b.numel())));
            }
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(b.data());
            }
        }
        kernels::gemm(n, fin, fout, x.data(), false, w.data(), true, 1.0, &mut out);
        Tensor::new(vec![n, fout], out)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let mut ins = vec![x, w];
        ins.extend(b);
        self.forward_op(OpKind::Conv2d { stride, padding }, &ins)
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let mut ins = vec![x, w];
        ins.extend(b);
        self.forward_op(OpKind::Linear, &ins)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::Relu, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::Sigmoid, &[x])
    }

    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, seed: u64) -> Result<Var> {
        self.forward_op(OpKind::Dropout { p, mode, seed }, &[x])
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::GlobalAvgPool, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        self.forward_op(OpKind::Scale(s), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::Sum, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.forward_op(OpKind::Mean, &[x])
    }

    /// Reverse sweep from a scalar node. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if !self.grad_enabled {
            return Err(TensorError::GradDisabled);
        }
        let shape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let Some(op) = &node.op else {
                grads[id] = Some(dy);
                continue;
            };
            let input = |k: usize| &self.nodes[node.inputs[k]].value;
            let mut contribs: Vec<(usize, Vec<f64>)> = Vec::with_capacity(node.inputs.len());
            match op {
                OpKind::Conv2d { .. } => {
                    let Saved::Conv(g) = &node.saved else { unreachable!() };
                    let (x, w) = (input(0), input(1));
                    let cg = kernels::conv2d_backward(x.data(), x.shape()[0], g, w.data(), w.shape()[0], &dy);
                    contribs.push((node.inputs[0], cg.dx));
                    contribs.push((node.inputs[1], cg.dw));
                    if node.inputs.len() == 3 {
                        contribs.push((node.inputs[2], cg.db));
                    }
                }
                OpKind::Linear => {
                    let (x, w) = (input(0), input(1));
                    let (n, fin) = (x.shape()[0], x.shape()[1]);
                    let fout = w.shape()[0];
                    let mut dx = vec![0.0; n * fin];
                    kernels::gemm(n, fout, fin, &dy, false, w.data(), false, 0.0, &mut dx);
                    let mut dw = vec![0.0; fout * fin];
                    kernels::gemm(fout, n, fin, &dy, true, x.data(), false, 0.0, &mut dw);
                    contribs.push((node.inputs[0], dx));
                    contribs.push((node.inputs[1], dw));
                    if node.inputs.len() == 3 {
                        let mut db = vec![0.0; fout];
                        for row in dy.chunks(fout) {
                            db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                        }
                        contribs.push((node.inputs[2], db));
                    }
                }
                OpKind::Relu => {
                    let x = input(0).data();
                    let dx = dy.iter().zip(x).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                    contribs.push((node.inputs[0], dx));
                }
                OpKind::Sigmoid => {
                    let y = node.value.data();
                    let dx = dy.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                    contribs.push((node.inputs[0], dx));
                }
                OpKind::Dropout { .. } => {
                    let dx = match &node.saved {
                        Saved::Mask(mask) => dy.iter().zip(mask).map(|(g, m)| g * m).collect(),
                        _ => dy,
                    };
                    contribs.push((node.inputs[0], dx));
                }
                OpKind::GlobalAvgPool => {
                    let x = input(0);
                    let hw = x.shape()[2] * x.shape()[3];
                    let mut dx = vec![0.0; x.numel()];
                    for (plane, g) in dx.chunks_mut(hw).zip(&dy) {
                        plane.fill(g / hw as f64);
                    }
                    contribs.push((node.inputs[0], dx));
                }
                OpKind::Add => {
                    contribs.push((node.inputs[0], dy.clone()));
                    contribs.push((node.inputs[1], dy));
                }
                OpKind::Mul => {
                    let (a, b) = (input(0).data(), input(1).data());
                    contribs.push((node.inputs[0], dy.iter().zip(b).map(|(g, v)| g * v).collect()));
                    contribs.push((node.inputs[1], dy.iter().zip(a).map(|(g, v)| g * v).collect()));
                }
                OpKind::Scale(s) => {
                    contribs.push((node.inputs[0], dy.iter().map(|g| g * s).collect()));
                }
                OpKind::Sum | OpKind::Mean => {
                    let n = input(0).numel();
                    let g = if *op == OpKind::Mean { dy[0] / n as f64 } else { dy[0] };
                    contribs.push((node.inputs[0], vec![g; n]));
                }
                OpKind::Bce {
                    labels,
                    weights,
                    eps,
                } => {
                    let n = labels.len() as f64;
                    let dx = input(0)
                        .data()
                        .iter()
                        .zip(labels)
                        .zip(weights)
                        .map(|((&p, &y), &w)| dy[0] * w * loss::bce_term_grad(p, y, *eps) / n)
                        .collect();
                    contribs.push((node.inputs[0], dx));
                }
                OpKind::Balanced { labels } => {
                    let n = labels.len() as f64;
                    let dx = input(0)
                        .data()
                        .iter()
                        .zip(labels)
                        .map(|(&p, &y)| dy[0] * loss::balanced_term_grad(p, y) / n)
                        .collect();
                    contribs.push((node.inputs[0], dx));
                }
            }
            for (target, g) in contribs {
                match &mut grads[target] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let mut params = BTreeMap::new();
        for (id, node) in self.nodes.into_iter().enumerate() {
            let Some(name) = node.param else { continue };
            let shape = node.value.shape().to_vec();
            let g = match grads[id].take() {
                Some(g) => Tensor::new(shape, g)?,
                None => Tensor::zeros(&shape),
            };
            match params.get_mut(&name) {
                Some(acc) => {
                    let acc: &mut Tensor = acc;
                    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
                }
                None => {
                    params.insert(name, g);
                }
            }
        }
        Ok(Gradients { params })
    }
}

use super::{Result, Tape, Tensor, TensorError, Var};

const THETA: &str = "theta";

fn eval_scalar<F>(f: &F, theta: Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::no_grad();
    let v = tape.param(THETA, theta);
    let out = f(&mut tape, v)?;
    let value = tape.value(out);
    value
        .item()
        .ok_or_else(|| TensorError::NonScalarLoss(value.shape().to_vec()))
}

/// Central-difference gradient of the scalar function `f` at `theta`.
pub fn central_difference<F>(f: &F, theta: &Tensor, step: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(TensorError::InvalidAttr {
            op: "finite_difference",
            detail: format!("step must be positive, got {step}"),
        });
    }
    (0..theta.numel())
        .map(|i| {
            let mut plus = theta.clone();
            plus.data_mut()[i] += step;
            let mut minus = theta.clone();
            minus.data_mut()[i] -= step;
            Ok((eval_scalar(f, plus)? - eval_scalar(f, minus)?) / (2.0 * step))
        })
        .collect()
}

/// Largest `|analytic - numeric| / max(1, |analytic|)` over the coordinates of `theta`,
/// comparing the tape gradient of `f` with central differences.
pub fn finite_difference_check<F>(f: F, theta: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let numeric = central_difference(&f, theta, step)?;
    let mut tape = Tape::new();
    let v = tape.param(THETA, theta.clone());
    let loss = f(&mut tape, v)?;
    let grads = tape.backward(loss)?;
    let analytic = grads.get(THETA).expect("theta is registered");
    Ok(analytic
        .data()
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max))
}
